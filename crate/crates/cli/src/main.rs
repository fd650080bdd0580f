fn main() {
    std::process::exit(ldp_cli::main_with_args(std::env::args_os()));
}
