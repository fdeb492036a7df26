fn main() {
    std::process::exit(usfield_cli::run(std::env::args_os()));
}
