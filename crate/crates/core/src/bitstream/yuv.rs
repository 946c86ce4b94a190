//! Planar 4:2:0 8-bit raw video. Only the luma plane is consumed; chroma
//! planes are skipped on read and written as neutral grey.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::noise::Picture;
use crate::plane::Plane;

fn chroma_len(width: usize, height: usize) -> usize {
    2 * width.div_ceil(2) * height.div_ceil(2)
}

/// Streaming reader yielding one luma picture per frame.
pub struct YuvReader<R> {
    inner: R,
    width: usize,
    height: usize,
    next_index: u32,
    chroma_scratch: Vec<u8>,
}

impl YuvReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let file = File::open(path)?;
        Ok(YuvReader::new(BufReader::new(file), width, height))
    }
}

impl<R: Read> YuvReader<R> {
    pub fn new(inner: R, width: usize, height: usize) -> Self {
        YuvReader {
            inner,
            width,
            height,
            next_index: 0,
            chroma_scratch: vec![0; chroma_len(width, height)],
        }
    }

    fn read_frame(&mut self) -> Result<Option<Picture>> {
        let mut luma = vec![0u8; self.width * self.height];
        let mut filled = 0;
        while filled < luma.len() {
            match self.inner.read(&mut luma[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        if filled == 0 {
            return Ok(None);
        }
        if filled < luma.len() {
            return Err(Error::MalformedStream(format!(
                "raw video ends inside frame {}",
                self.next_index
            )));
        }
        self.inner.read_exact(&mut self.chroma_scratch).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::MalformedStream(format!("raw video ends inside frame {} chroma", self.next_index))
            } else {
                e.into()
            }
        })?;
        let picture = Picture::new(
            Plane::from_vec(self.width, self.height, luma)?,
            self.next_index,
        );
        self.next_index += 1;
        Ok(Some(picture))
    }
}

impl<R: Read> Iterator for YuvReader<R> {
    type Item = Result<Picture>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_frame().transpose()
    }
}

pub fn read_yuv420(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Vec<Picture>> {
    YuvReader::open(path, width, height)?.collect()
}

pub fn write_yuv420(path: impl AsRef<Path>, pictures: &[Picture]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in pictures {
        let (w, h) = p.luma.dims();
        out.write_all(p.luma.as_slice())?;
        out.write_all(&vec![128u8; chroma_len(w, h)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.yuv");
        let pics: Vec<Picture> = (0..3)
            .map(|i| Picture::new(Plane::from_fn(6, 4, |x, y| (x * 10 + y + i) as u8), i as u32))
            .collect();
        write_yuv420(&path, &pics).unwrap();
        let back = read_yuv420(&path, 6, 4).unwrap();
        assert_eq!(back, pics);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_yuv420(&path, 6, 4), Err(Error::MalformedStream(_))));
    }
}
