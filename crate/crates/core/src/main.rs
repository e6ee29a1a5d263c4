fn main() -> std::process::ExitCode {
    copg::cli::main_with_args(std::env::args_os())
}
