fn main() -> std::process::ExitCode {
    lanesnn_cli::run(std::env::args_os())
}
