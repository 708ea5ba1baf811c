fn main() { std::process::exit(detreli::cli::main_exit()) }
