fn main() {
    std::process::exit(notematch::runner::main_with_args(std::env::args_os()));
}
