fn main() {
    std::process::exit(bgprtt::cli::run_with_args(std::env::args_os()));
}
