fn main() {
    std::process::exit(gridsweep::cli::main_entry());
}
