fn main() {
    std::process::exit(meshmap::cli::run(std::env::args_os()));
}
