use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use crate::envs::EnvError;

/// One line-oriented duplex connection.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), EnvError>;
    /// Next line without its terminator.
    fn recv_line(&mut self, timeout: Duration) -> Result<String, EnvError>;
    /// Best-effort shutdown.
    fn close(&mut self) {}
}

/// Child process spoken to over its standard input and output. A reader
/// thread forwards stdout lines so reads can time out.
pub struct ChildTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ChildTransport {
    /// Splits `command` on whitespace; the first word is the program.
    pub fn spawn(command: &str) -> Result<Self, EnvError> {
        let mut words = command.split_whitespace();
        let program = words.next().ok_or_else(|| EnvError::Config("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(words)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EnvError::Transport(format!("cannot spawn {program:?}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Ok(ChildTransport { child, stdin, lines: rx })
    }
}

impl Transport for ChildTransport {
    fn send_line(&mut self, line: &str) -> Result<(), EnvError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| EnvError::Transport("stdin closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| EnvError::Transport(format!("write failed: {e}")))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String, EnvError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(EnvError::Transport(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(EnvError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(EnvError::Transport("server closed the stream".into())),
        }
    }

    fn close(&mut self) {
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, EnvError> {
        use std::net::ToSocketAddrs;
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| EnvError::Transport(format!("cannot resolve {addr}: {e}")))?
            .next()
            .ok_or_else(|| EnvError::Transport(format!("no address for {addr}")))?;
        let stream =
            TcpStream::connect_timeout(&sock, timeout).map_err(|e| EnvError::Transport(format!("cannot connect to {addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        let writer = stream.try_clone().map_err(|e| EnvError::Transport(e.to_string()))?;
        Ok(TcpTransport { reader: BufReader::new(stream), writer })
    }
}

impl Transport for TcpTransport {
    fn send_line(&mut self, line: &str) -> Result<(), EnvError> {
        self.writer
            .write_all(format!("{line}\n").as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| EnvError::Transport(format!("write failed: {e}")))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String, EnvError> {
        self.reader.get_ref().set_read_timeout(Some(timeout)).map_err(|e| EnvError::Transport(e.to_string()))?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(EnvError::Transport("server closed the stream".into())),
            Ok(_) => {
                while line.ends_with('\n') || line.ends_with('\r') {
                    line.pop();
                }
                Ok(line)
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => Err(EnvError::Timeout(timeout)),
            Err(e) => Err(EnvError::Transport(format!("read failed: {e}"))),
        }
    }

    fn close(&mut self) {
        let _ = self.writer.shutdown(std::net::Shutdown::Both);
    }
}
