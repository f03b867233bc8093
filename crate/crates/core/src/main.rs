fn main() {
    std::process::exit(ergoselect::cli::main_with_args(std::env::args_os()));
}
