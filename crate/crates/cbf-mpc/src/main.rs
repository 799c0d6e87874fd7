fn main() {
    std::process::exit(cbf_mpc::cli::run());
}
