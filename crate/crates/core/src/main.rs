fn main() -> std::process::ExitCode {
    rics_v2x::cli::main_entry()
}
