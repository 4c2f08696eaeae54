use clap::Parser;

/// Keeps glibc from returning the large per-step training buffers to the
/// kernel and faulting them back in on the next step.
fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds; called before any threads start.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

fn main() {
    tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = wsseg_cli::Cli::parse();
    if let Err(e) = wsseg_cli::run(cli, args) {
        eprintln!("error: {e}");
        std::process::exit(wsseg_cli::exit_code(&e));
    }
}
