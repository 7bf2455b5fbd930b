fn main() {
    std::process::exit(ldrisk_cli::run(std::env::args_os()));
}
