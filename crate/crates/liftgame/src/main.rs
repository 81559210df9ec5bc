fn main() {
    std::process::exit(liftgame::cli::main_with_args(std::env::args_os()));
}
