fn main() {
    std::process::exit(wavebender_service::cli::run(std::env::args_os()));
}
