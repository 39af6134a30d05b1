//! Finds functions containing unsafe code in Rust sources.
//!
//! ```text
//! cargo run --example scan_sources            # built-in sample
//! cargo run --example scan_sources -- src/    # a directory or files
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use unsafe_focus::scan_source;

const SAMPLE: &str = r#"
pub fn store_at(buf: &mut [u8], i: usize, v: u8) {
    // SAFETY: caller checked bounds
    unsafe { *buf.as_mut_ptr().add(i) = v }
}

pub fn caller(buf: &mut [u8]) {
    let msg = "unsafe { not code }";
    store_at(buf, 0, msg.len() as u8);
}

unsafe impl Send for Wrapper {}
"#;

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            collect(&e.path(), out)?;
        }
    } else if path.extension().is_some_and(|e| e == "rs") {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let files: Vec<(String, String)> = if args.is_empty() {
        vec![("sample.rs".into(), SAMPLE.into())]
    } else {
        let mut paths = Vec::new();
        for a in &args {
            collect(a, &mut paths)?;
        }
        paths
            .iter()
            .map(|p| Ok((p.display().to_string(), fs::read_to_string(p)?)))
            .collect::<std::io::Result<_>>()?
    };

    let report = scan_source(files.iter().map(|(p, s)| (p.as_str(), s.as_str())))?;
    println!("unsafe functions ({}):", report.manifest.len());
    for f in report.manifest.functions() {
        println!("  {f}");
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
