fn main() {
    std::process::exit(mishape::cli::run(std::env::args_os()));
}
