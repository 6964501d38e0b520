fn main() {
    std::process::exit(critheat::cli::main_from_env());
}
