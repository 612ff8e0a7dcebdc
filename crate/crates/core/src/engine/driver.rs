use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::AudioEngine;

/// Runs an engine on its own thread, paced by the wall clock instead of an
/// audio device. Output is discarded; telemetry still flows to the handle.
#[derive(Debug)]
pub struct PacedDriver {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<AudioEngine>>,
}

impl PacedDriver {
    pub fn spawn(mut engine: AudioEngine) -> std::io::Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new().name("harmonia-audio".into()).spawn(move || {
            let period = Duration::from_secs_f64(engine.buffer_len() as f64 / engine.sample_rate());
            let mut out = vec![[0.0f32; 2]; engine.buffer_len()];
            let mut deadline = Instant::now();
            while !flag.load(Ordering::Relaxed) {
                // buffer sizes are fixed at construction, so this cannot fail
                let _ = engine.process_block(None, &[], &mut out);
                deadline += period;
                let now = Instant::now();
                if deadline > now {
                    std::thread::sleep(deadline - now);
                } else {
                    // fell behind; drop the backlog rather than racing to catch up
                    deadline = now;
                }
            }
            engine
        })?;
        Ok(Self {
            stop,
            thread: Some(thread),
        })
    }

    /// Stops the thread and hands the engine back.
    pub fn stop(mut self) -> Option<AudioEngine> {
        self.halt()
    }

    fn halt(&mut self) -> Option<AudioEngine> {
        self.stop.store(true, Ordering::Relaxed);
        self.thread.take().and_then(|t| t.join().ok())
    }
}

impl Drop for PacedDriver {
    fn drop(&mut self) {
        self.halt();
    }
}
