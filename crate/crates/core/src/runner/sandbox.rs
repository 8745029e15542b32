//! Process isolation: own process group, file-size limit, and a fresh
//! network namespace with no configured interfaces.
//!
//! A plain network namespace needs CAP_SYS_ADMIN; without it a user
//! namespace mapping the caller's uid/gid onto itself is created first.
//! When neither works, runs that deny the network are refused.

use std::ffi::CString;
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use std::os::unix::process::CommandExt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Isolation {
    /// New network namespace only.
    NetNs,
    /// New user namespace (identity-mapped) plus network namespace.
    UserNetNs,
    /// No network isolation; only allowed when the policy permits network.
    Off,
}

impl Isolation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Isolation::NetNs => "netns",
            Isolation::UserNetNs => "userns+netns",
            Isolation::Off => "none",
        }
    }
}

/// # Safety
/// Only async-signal-safe calls; used between fork and exec.
unsafe fn write_file(path: &CString, data: &[u8]) -> bool {
    let fd = libc::open(path.as_ptr(), libc::O_WRONLY);
    if fd < 0 {
        return false;
    }
    let n = libc::write(fd, data.as_ptr().cast(), data.len());
    libc::close(fd);
    n == data.len() as isize
}

/// Configure `cmd` to start in its own process group, with `max_file_bytes`
/// as the per-file size limit and the given isolation.
pub fn confine(cmd: &mut Command, isolation: Isolation, max_file_bytes: u64) {
    let uid = unsafe { libc::getuid() };
    let gid = unsafe { libc::getgid() };
    let setgroups = CString::new("/proc/self/setgroups").unwrap();
    let uid_map = CString::new("/proc/self/uid_map").unwrap();
    let gid_map = CString::new("/proc/self/gid_map").unwrap();
    let uid_line = format!("{uid} {uid} 1\n").into_bytes();
    let gid_line = format!("{gid} {gid} 1\n").into_bytes();
    // SAFETY: the closure only calls async-signal-safe libc functions on
    // data prepared before fork.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            let lim = libc::rlimit { rlim_cur: max_file_bytes as libc::rlim_t, rlim_max: max_file_bytes as libc::rlim_t };
            if libc::setrlimit(libc::RLIMIT_FSIZE, &lim) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            match isolation {
                Isolation::Off => {}
                Isolation::NetNs => {
                    if libc::unshare(libc::CLONE_NEWNET) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                }
                Isolation::UserNetNs => {
                    if libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    let _ = write_file(&setgroups, b"deny");
                    if !write_file(&uid_map, &uid_line) || !write_file(&gid_map, &gid_line) {
                        return Err(std::io::Error::other("cannot write id maps"));
                    }
                }
            }
            Ok(())
        });
    }
}

fn works(isolation: Isolation) -> bool {
    let mut cmd = Command::new("true");
    cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
    confine(&mut cmd, isolation, u64::MAX >> 1);
    cmd.status().map(|s| s.success()).unwrap_or(false)
}

/// Strongest network isolation this host supports, probed once.
pub fn available_isolation() -> Isolation {
    static CACHE: OnceLock<Isolation> = OnceLock::new();
    *CACHE.get_or_init(|| {
        [Isolation::NetNs, Isolation::UserNetNs].into_iter().find(|&i| works(i)).unwrap_or(Isolation::Off)
    })
}

/// Kill every process in group `pgid`.
pub fn kill_group(pgid: u32) {
    // SAFETY: plain signal delivery to a process group we created.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
    }
}
