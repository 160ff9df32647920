fn main() {
    std::process::exit(mirror::cli::run(std::env::args_os()));
}
