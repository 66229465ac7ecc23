fn main() {
    std::process::exit(layerfork_cli::main_with(std::env::args_os()));
}
