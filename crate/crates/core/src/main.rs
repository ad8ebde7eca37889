fn main() {
    std::process::exit(geofuse::cli::run(std::env::args_os()));
}
