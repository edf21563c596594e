use std::io::{self, Write};

use super::{EventKind, Nanos};

/// Writes `time_ns,kind,node,detail` lines.
pub struct TraceSink {
    out: Box<dyn Write + Send>,
    lines: u64,
}

impl TraceSink {
    pub fn new(out: Box<dyn Write + Send>) -> io::Result<Self> {
        let mut sink = TraceSink { out, lines: 0 };
        writeln!(sink.out, "time_ns,kind,node,detail")?;
        Ok(sink)
    }

    pub fn record(&mut self, time: Nanos, kind: EventKind, node: &str, detail: &str) -> io::Result<()> {
        self.lines += 1;
        writeln!(self.out, "{time},{},{node},{detail}", kind.as_str())
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}
