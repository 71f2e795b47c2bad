fn main() -> std::process::ExitCode {
    superres::cli::main()
}
