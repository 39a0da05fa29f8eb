fn main() {
    shrubmap_cli::cli::init_logging();
    std::process::exit(shrubmap_cli::cli::run(std::env::args_os()));
}
