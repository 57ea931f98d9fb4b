fn main() {
    std::process::exit(ambiforge::cli::run(std::env::args_os()));
}
