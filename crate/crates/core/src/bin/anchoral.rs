fn main() -> std::process::ExitCode {
    anchoral::cli::main()
}
