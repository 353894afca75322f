fn main() {
    std::process::exit(handover_events::cli::run(std::env::args_os()));
}
