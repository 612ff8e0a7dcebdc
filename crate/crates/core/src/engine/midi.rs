/// MIDI input as seen by the engine, applied at the start of a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MidiEvent {
    /// Velocity 0 counts as a note-off.
    NoteOn { note: u8, velocity: u8 },
    NoteOff { note: u8 },
    /// Bend in semitones, clamped to ±2.
    PitchBend { semitones: f64 },
    AllNotesOff,
}

/// Held notes, most recent last. Monophonic with last-note priority.
#[derive(Debug, Clone)]
pub(crate) struct NoteStack {
    notes: [u8; 128],
    velocities: [u8; 128],
    len: usize,
    pub bend: f64,
}

impl Default for NoteStack {
    fn default() -> Self {
        Self {
            notes: [0; 128],
            velocities: [0; 128],
            len: 0,
            bend: 0.0,
        }
    }
}

impl NoteStack {
    /// Applies `event`; returns `true` when a note starts from silence.
    pub fn apply(&mut self, event: &MidiEvent) -> bool {
        match *event {
            MidiEvent::NoteOn { note, velocity } if velocity > 0 && note < 128 => {
                let was_silent = self.len == 0;
                self.remove(note);
                self.notes[self.len] = note;
                self.velocities[self.len] = velocity.min(127);
                self.len += 1;
                was_silent
            }
            MidiEvent::NoteOn { note, .. } | MidiEvent::NoteOff { note } => {
                self.remove(note);
                false
            }
            MidiEvent::PitchBend { semitones } => {
                self.bend = if semitones.is_finite() { semitones.clamp(-2.0, 2.0) } else { 0.0 };
                false
            }
            MidiEvent::AllNotesOff => {
                self.len = 0;
                false
            }
        }
    }

    fn remove(&mut self, note: u8) {
        if let Some(i) = self.notes[..self.len].iter().position(|n| *n == note) {
            self.notes.copy_within(i + 1..self.len, i);
            self.velocities.copy_within(i + 1..self.len, i);
            self.len -= 1;
        }
    }

    /// The sounding note and its velocity.
    pub fn active(&self) -> Option<(u8, u8)> {
        (self.len > 0).then(|| (self.notes[self.len - 1], self.velocities[self.len - 1]))
    }
}
