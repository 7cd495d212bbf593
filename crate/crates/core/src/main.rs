fn main() {
    std::process::exit(cforge::cli::run(std::env::args_os()));
}
