fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STEREO_LOG", "warn")).init();
    std::process::exit(stereo_audit::cli::main_with(std::env::args_os()));
}
