fn main() {
    std::process::exit(platform_risk::cli::run(std::env::args_os()));
}
