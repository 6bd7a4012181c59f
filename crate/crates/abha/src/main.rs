fn main() -> std::process::ExitCode {
    abha::cli::main()
}
