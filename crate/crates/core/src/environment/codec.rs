//! Portable binary record of an [`EnvTrajectory`].
//!
//! All integers are little-endian; `varint` is unsigned LEB128.
//!
//! ```text
//! magic        8 bytes   "PAMTRAJ1"
//! kind         u8        0 = ISRW, 1 = SEP, 2 = SVM, 3 = constant
//! level        f64       constant level (0 for the other kinds)
//! dim, side    u32, u32
//! has_seed     u8        1 if the seed pair follows meaningfully
//! master_seed  u64
//! stream_index u64
//! t_end        f64
//! initial      varint × L^d   occupation per site
//! n_events     u64
//! events       n_events × { varint time delta, payload }
//! ```
//!
//! Event times are delta-encoded on their IEEE-754 bit patterns (positive and
//! strictly increasing, so the deltas are positive integers), which makes the
//! round trip bit-exact. Payloads are `varint particle, u8 dir` (ISRW),
//! `varint edge` (SEP) and `varint site, u8 dir` (SVM).

use std::io::{Read, Write};

use super::{EnvKind, EnvState, EnvTrajectory, Event, EventPayload};
use crate::error::{Error, Result};
use crate::lattice::Torus;

const MAGIC: &[u8; 8] = b"PAMTRAJ1";

pub(super) fn write<W: Write>(traj: &EnvTrajectory, mut w: W) -> Result<()> {
    let torus = traj.torus();
    let (code, level) = match traj.kind() {
        EnvKind::Isrw => (0u8, 0.0),
        EnvKind::Sep => (1, 0.0),
        EnvKind::Svm => (2, 0.0),
        EnvKind::Constant(c) => (3, c),
    };
    let mut buf = Vec::with_capacity(64 + torus.sites() + 4 * traj.events().len());
    buf.extend_from_slice(MAGIC);
    buf.push(code);
    buf.extend_from_slice(&f64::to_le_bytes(level));
    buf.extend_from_slice(&(torus.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(torus.side() as u32).to_le_bytes());
    let (has_seed, (master, stream)) = match traj.seed() {
        Some(pair) => (1u8, pair),
        None => (0, (0, 0)),
    };
    buf.push(has_seed);
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(&stream.to_le_bytes());
    buf.extend_from_slice(&traj.t_end().to_le_bytes());
    for &n in traj.initial().occupation() {
        put_varint(&mut buf, n as u64);
    }
    buf.extend_from_slice(&(traj.events().len() as u64).to_le_bytes());
    let mut prev_bits = 0u64;
    for event in traj.events() {
        let bits = event.time.to_bits();
        put_varint(&mut buf, bits - prev_bits);
        prev_bits = bits;
        match event.payload {
            EventPayload::Hop { particle, dir } => {
                put_varint(&mut buf, particle as u64);
                buf.push(dir);
            }
            EventPayload::Swap { edge } => put_varint(&mut buf, edge as u64),
            EventPayload::Adopt { site, dir } => {
                put_varint(&mut buf, site as u64);
                buf.push(dir);
            }
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub(super) fn read<R: Read>(mut r: R) -> Result<EnvTrajectory> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Reader { bytes: &bytes, at: 0 };

    if cur.take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let code = cur.u8()?;
    let level = f64::from_le_bytes(cur.array()?);
    let kind = match code {
        0 => EnvKind::Isrw,
        1 => EnvKind::Sep,
        2 => EnvKind::Svm,
        3 => EnvKind::Constant(level),
        other => return Err(Error::Format(format!("unknown kind code {other}"))),
    };
    let dim = u32::from_le_bytes(cur.array()?) as usize;
    let side = u32::from_le_bytes(cur.array()?) as usize;
    let torus = Torus::new(dim, side)?;
    let has_seed = cur.u8()? == 1;
    let master = u64::from_le_bytes(cur.array()?);
    let stream = u64::from_le_bytes(cur.array()?);
    let t_end = f64::from_le_bytes(cur.array()?);
    let occupation = (0..torus.sites())
        .map(|_| {
            cur.varint()
                .and_then(|n| u32::try_from(n).map_err(|_| Error::Format("occupation overflow".into())))
        })
        .collect::<Result<Vec<u32>>>()?;
    let initial = EnvState::new(kind, torus, occupation)?;

    let n_events = u64::from_le_bytes(cur.array()?) as usize;
    let mut events = Vec::with_capacity(n_events.min(bytes.len()));
    let mut bits = 0u64;
    for _ in 0..n_events {
        bits = bits
            .checked_add(cur.varint()?)
            .ok_or_else(|| Error::Format("time overflow".into()))?;
        let payload = match kind {
            EnvKind::Isrw => EventPayload::Hop {
                particle: cur.varint_u32()?,
                dir: cur.u8()?,
            },
            EnvKind::Sep => EventPayload::Swap {
                edge: cur.varint_u32()?,
            },
            EnvKind::Svm => EventPayload::Adopt {
                site: cur.varint_u32()?,
                dir: cur.u8()?,
            },
            EnvKind::Constant(_) => {
                return Err(Error::Format("constant trajectory with events".into()))
            }
        };
        events.push(Event {
            time: f64::from_bits(bits),
            payload,
        });
    }
    if cur.at != bytes.len() {
        return Err(Error::Format("trailing bytes".into()));
    }
    let seed = has_seed.then_some((master, stream));
    EnvTrajectory::assemble(initial, events, t_end, seed)
}

fn put_varint(buf: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        buf.push((v as u8) | 0x80);
        v >>= 7;
    }
    buf.push(v as u8);
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated record".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Format("varint too long".into()))
    }

    fn varint_u32(&mut self) -> Result<u32> {
        u32::try_from(self.varint()?).map_err(|_| Error::Format("index overflow".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::sample_trajectory;
    use crate::rng::RngStream;

    #[test]
    fn round_trip_is_exact() {
        let torus = Torus::new(2, 5).unwrap();
        for kind in [EnvKind::Isrw, EnvKind::Sep, EnvKind::Svm, EnvKind::Constant(2.5)] {
            let mut rng = RngStream::new(12, 4);
            let traj = sample_trajectory(kind, torus, 0.5, 7.5, &mut rng).unwrap();
            let mut bytes = Vec::new();
            traj.write_to(&mut bytes).unwrap();
            let back = EnvTrajectory::read_from(bytes.as_slice()).unwrap();
            assert_eq!(back, traj);
        }
    }

    #[test]
    fn rejects_corruption() {
        let torus = Torus::new(1, 8).unwrap();
        let mut rng = RngStream::new(1, 1);
        let traj = sample_trajectory(EnvKind::Isrw, torus, 1.0, 2.0, &mut rng).unwrap();
        let mut bytes = Vec::new();
        traj.write_to(&mut bytes).unwrap();
        assert!(EnvTrajectory::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(EnvTrajectory::read_from(extra.as_slice()).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(EnvTrajectory::read_from(magic.as_slice()).is_err());
    }
}
