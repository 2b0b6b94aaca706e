fn main() {
    std::process::exit(uncertseg::cli::main_with_args(std::env::args_os()));
}
