fn main() {
    std::process::exit(instasim::cli::run(std::env::args_os()));
}
