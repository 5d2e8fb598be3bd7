fn main() {
    std::process::exit(bgn::cli::run(std::env::args_os()));
}
