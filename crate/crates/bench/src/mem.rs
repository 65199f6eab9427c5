//! Best-effort memory figures from procfs. Elsewhere every value is `None`.

use std::fs;

fn kib_field(text: &str, key: &str) -> Option<u64> {
    let line = text.lines().find(|l| l.starts_with(key))?;
    let kib: u64 = line[key.len()..].trim().trim_end_matches("kB").trim().parse().ok()?;
    Some(kib * 1024)
}

/// Peak resident set size of this process.
pub fn peak_rss_bytes() -> Option<u64> {
    kib_field(&fs::read_to_string("/proc/self/status").ok()?, "VmHWM:")
}

/// Restarts peak tracking so the next reading covers only what follows.
pub fn reset_peak() {
    let _ = fs::write("/proc/self/clear_refs", "5");
}

pub fn available_bytes() -> Option<u64> {
    kib_field(&fs::read_to_string("/proc/meminfo").ok()?, "MemAvailable:")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kib_lines() {
        let text = "Name:\tx\nVmHWM:\t   2048 kB\nVmRSS:\t 10 kB\n";
        assert_eq!(kib_field(text, "VmHWM:"), Some(2048 * 1024));
        assert_eq!(kib_field(text, "VmPeak:"), None);
    }

    #[test]
    fn readings_are_positive_when_present() {
        if let Some(p) = peak_rss_bytes() {
            assert!(p > 0);
        }
    }
}
