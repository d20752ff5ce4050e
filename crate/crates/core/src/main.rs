fn main() {
    std::process::exit(levy_spde::cli::main_exit_code());
}
