//! Length-prefixed binary protocol for remote embedding providers.
//!
//! All integers and floats are little-endian. Every frame starts with a `u32`
//! byte count of the rest of the frame.
//!
//! ```text
//! request  = len:u32 | opcode:u8 | version:u16 | payload
//! response = len:u32 | status:u8 | body
//! ```
//!
//! Successful bodies are [`Payload`]s, which are also the on-disk encoding of
//! fixture files. Error bodies are a UTF-8 message. `docs/wire-protocol.md`
//! has the full byte layout.

use std::io::{self, Cursor, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use image::RgbImage;

use super::{
    DenseFeatureFrame, EmbeddingProvider, EmbeddingSpace, EmbeddingVector, Keypoint, KeypointSet,
    Modality, ProviderError, ProviderManifest,
};

pub const PROTOCOL_VERSION: u16 = 1;
/// Frames larger than this are rejected without being read.
pub const MAX_FRAME_LEN: u32 = 256 << 20;
/// Environment variable naming the provider endpoint (`host:port`).
pub const ENDPOINT_ENV: &str = "MODALMAP_PROVIDER";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum OpCode {
    Handshake = 0,
    EmbedText = 1,
    EmbedImageGlobal = 2,
    EmbedImageDense = 3,
    ExtractKeypoints = 4,
    EmbedImageRetrieval = 5,
    EmbedAudio = 6,
}

impl OpCode {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => OpCode::Handshake,
            1 => OpCode::EmbedText,
            2 => OpCode::EmbedImageGlobal,
            3 => OpCode::EmbedImageDense,
            4 => OpCode::ExtractKeypoints,
            5 => OpCode::EmbedImageRetrieval,
            6 => OpCode::EmbedAudio,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    BadRequest = 1,
    Unsupported = 2,
    NotFound = 3,
    VersionMismatch = 4,
    Internal = 5,
}

impl Status {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => Status::Ok,
            1 => Status::BadRequest,
            2 => Status::Unsupported,
            3 => Status::NotFound,
            4 => Status::VersionMismatch,
            5 => Status::Internal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Handshake,
    EmbedText { space: EmbeddingSpace, text: String },
    EmbedImageGlobal(RgbImage),
    /// `stride` 0 asks for the provider default.
    EmbedImageDense { stride: u16, image: RgbImage },
    ExtractKeypoints(RgbImage),
    EmbedImageRetrieval(RgbImage),
    EmbedAudio { sample_rate: u32, samples: Vec<i16> },
}

/// Body of a successful response; also the fixture file encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Manifest(ProviderManifest),
    Vector(EmbeddingVector),
    Dense(DenseFeatureFrame),
    Keypoints(KeypointSet),
}

const KIND_MANIFEST: u8 = 0;
const KIND_VECTOR: u8 = 1;
const KIND_DENSE: u8 = 2;
const KIND_KEYPOINTS: u8 = 3;

fn protocol(msg: impl Into<String>) -> ProviderError {
    ProviderError::Protocol(msg.into())
}

fn encode_png(image: &RgbImage) -> Result<Vec<u8>, ProviderError> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| protocol(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage, ProviderError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| protocol(format!("png decode: {e}")))?;
    Ok(img.to_rgb8())
}

impl Request {
    pub fn opcode(&self) -> OpCode {
        match self {
            Request::Handshake => OpCode::Handshake,
            Request::EmbedText { .. } => OpCode::EmbedText,
            Request::EmbedImageGlobal(_) => OpCode::EmbedImageGlobal,
            Request::EmbedImageDense { .. } => OpCode::EmbedImageDense,
            Request::ExtractKeypoints(_) => OpCode::ExtractKeypoints,
            Request::EmbedImageRetrieval(_) => OpCode::EmbedImageRetrieval,
            Request::EmbedAudio { .. } => OpCode::EmbedAudio,
        }
    }

    /// Full frame including the length prefix.
    pub fn encode(&self) -> Result<Vec<u8>, ProviderError> {
        let mut body = Vec::new();
        body.push(self.opcode() as u8);
        body.write_u16::<LE>(PROTOCOL_VERSION)?;
        match self {
            Request::Handshake => {}
            Request::EmbedText { space, text } => {
                body.push(space.tag());
                body.extend_from_slice(text.as_bytes());
            }
            Request::EmbedImageGlobal(img) | Request::ExtractKeypoints(img) | Request::EmbedImageRetrieval(img) => {
                body.extend(encode_png(img)?);
            }
            Request::EmbedImageDense { stride, image } => {
                body.write_u16::<LE>(*stride)?;
                body.extend(encode_png(image)?);
            }
            Request::EmbedAudio { sample_rate, samples } => {
                body.write_u32::<LE>(*sample_rate)?;
                for s in samples {
                    body.write_i16::<LE>(*s)?;
                }
            }
        }
        frame(body)
    }

    /// Parses a frame body (without the length prefix).
    pub fn decode(body: &[u8]) -> Result<Self, (Status, String)> {
        let bad = |m: &str| (Status::BadRequest, m.to_string());
        if body.len() < 3 {
            return Err(bad("request shorter than header"));
        }
        let op = OpCode::from_u8(body[0]).ok_or_else(|| bad("unknown opcode"))?;
        let version = u16::from_le_bytes([body[1], body[2]]);
        if version != PROTOCOL_VERSION {
            return Err((Status::VersionMismatch, format!("protocol version {version} not supported")));
        }
        let payload = &body[3..];
        let png = |bytes: &[u8]| decode_png(bytes).map_err(|e| (Status::BadRequest, e.to_string()));
        Ok(match op {
            OpCode::Handshake => Request::Handshake,
            OpCode::EmbedText => {
                let (&tag, text) = payload.split_first().ok_or_else(|| bad("missing space tag"))?;
                let space = EmbeddingSpace::from_tag(tag).ok_or_else(|| bad("unknown space tag"))?;
                let text = std::str::from_utf8(text).map_err(|_| bad("text is not UTF-8"))?;
                Request::EmbedText {
                    space,
                    text: text.to_string(),
                }
            }
            OpCode::EmbedImageGlobal => Request::EmbedImageGlobal(png(payload)?),
            OpCode::ExtractKeypoints => Request::ExtractKeypoints(png(payload)?),
            OpCode::EmbedImageRetrieval => Request::EmbedImageRetrieval(png(payload)?),
            OpCode::EmbedImageDense => {
                if payload.len() < 2 {
                    return Err(bad("missing stride"));
                }
                Request::EmbedImageDense {
                    stride: u16::from_le_bytes([payload[0], payload[1]]),
                    image: png(&payload[2..])?,
                }
            }
            OpCode::EmbedAudio => {
                if payload.len() < 4 || !(payload.len() - 4).is_multiple_of(2) {
                    return Err(bad("malformed audio payload"));
                }
                let sample_rate = u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]);
                let samples = payload[4..]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                Request::EmbedAudio { sample_rate, samples }
            }
        })
    }
}

fn frame(body: Vec<u8>) -> Result<Vec<u8>, ProviderError> {
    let len = u32::try_from(body.len()).map_err(|_| protocol("frame too large"))?;
    if len > MAX_FRAME_LEN {
        return Err(protocol("frame too large"));
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.write_u32::<LE>(len)?;
    out.extend(body);
    Ok(out)
}

fn write_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f32s(cur: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f32>, ProviderError> {
    let remaining = cur.get_ref().len() as u64 - cur.position();
    if (n as u64).saturating_mul(4) > remaining {
        return Err(protocol("truncated float array"));
    }
    let mut out = vec![0f32; n];
    cur.read_f32_into::<LE>(&mut out)?;
    Ok(out)
}

fn read_space(cur: &mut Cursor<&[u8]>) -> Result<EmbeddingSpace, ProviderError> {
    let tag = cur.read_u8()?;
    EmbeddingSpace::from_tag(tag).ok_or_else(|| protocol(format!("unknown space tag {tag}")))
}

impl Payload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Payload::Manifest(m) => {
                out.push(KIND_MANIFEST);
                out.extend(serde_json::to_vec(m).expect("manifest serializes"));
            }
            Payload::Vector(v) => {
                out.push(KIND_VECTOR);
                out.push(v.space().tag());
                out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
                write_f32s(&mut out, v.values());
            }
            Payload::Dense(d) => {
                out.push(KIND_DENSE);
                out.push(EmbeddingSpace::PixelText.tag());
                for x in [d.dim() as u32, d.width(), d.height(), d.stride()] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                write_f32s(&mut out, d.data());
            }
            Payload::Keypoints(k) => {
                out.push(KIND_KEYPOINTS);
                out.push(EmbeddingSpace::LocalFeature.tag());
                for x in [k.dim() as u32, k.width(), k.height(), k.len() as u32] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for kp in k.keypoints() {
                    write_f32s(&mut out, &[kp.u, kp.v, kp.score]);
                }
                write_f32s(&mut out, k.descriptors());
            }
        }
        out
    }

    /// Decodes a body, re-normalizing any vector that drifted from unit norm.
    pub fn decode(bytes: &[u8]) -> Result<Self, ProviderError> {
        let mut cur = Cursor::new(bytes);
        let kind = cur.read_u8().map_err(|_| protocol("empty payload"))?;
        let payload = match kind {
            KIND_MANIFEST => {
                let m: ProviderManifest = serde_json::from_slice(&bytes[1..])
                    .map_err(|e| protocol(format!("manifest: {e}")))?;
                m.validate()?;
                Payload::Manifest(m)
            }
            KIND_VECTOR => {
                let space = read_space(&mut cur)?;
                let dim = cur.read_u32::<LE>()? as usize;
                let values = read_f32s(&mut cur, dim)?;
                Payload::Vector(EmbeddingVector::from_wire(space, values)?)
            }
            KIND_DENSE => {
                let _space = read_space(&mut cur)?;
                let dim = cur.read_u32::<LE>()? as usize;
                let width = cur.read_u32::<LE>()?;
                let height = cur.read_u32::<LE>()?;
                let stride = cur.read_u32::<LE>()?;
                if stride == 0 || dim == 0 {
                    return Err(protocol("dense frame with zero stride or dimension"));
                }
                let cells = (width.div_ceil(stride) as u64) * (height.div_ceil(stride) as u64);
                let n = usize::try_from(cells.saturating_mul(dim as u64)).map_err(|_| protocol("dense frame too large"))?;
                let data = read_f32s(&mut cur, n)?;
                Payload::Dense(DenseFeatureFrame::from_wire(width, height, stride, dim, data)?)
            }
            KIND_KEYPOINTS => {
                let _space = read_space(&mut cur)?;
                let dim = cur.read_u32::<LE>()? as usize;
                let width = cur.read_u32::<LE>()?;
                let height = cur.read_u32::<LE>()?;
                let count = cur.read_u32::<LE>()? as usize;
                let raw = read_f32s(&mut cur, count.saturating_mul(3))?;
                let keypoints = raw
                    .chunks_exact(3)
                    .map(|c| Keypoint { u: c[0], v: c[1], score: c[2] })
                    .collect();
                let descriptors = read_f32s(&mut cur, count.saturating_mul(dim))?;
                Payload::Keypoints(KeypointSet::from_wire(width, height, dim, keypoints, descriptors)?)
            }
            k => return Err(protocol(format!("unknown payload kind {k}"))),
        };
        if kind != KIND_MANIFEST && cur.position() as usize != bytes.len() {
            return Err(protocol("trailing bytes after payload"));
        }
        Ok(payload)
    }
}

/// Reads one length-prefixed frame body. `Ok(None)` on clean EOF.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame exceeds maximum length"));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

fn response_frame(status: Status, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 5);
    out.extend_from_slice(&((body.len() + 1) as u32).to_le_bytes());
    out.push(status as u8);
    out.extend_from_slice(body);
    out
}

fn error_status(e: &ProviderError) -> Status {
    match e {
        ProviderError::ModalityUnsupported(_) | ProviderError::UnsupportedSampleRate(_) => Status::Unsupported,
        ProviderError::MissingFixture { .. } => Status::NotFound,
        ProviderError::EmptyInput | ProviderError::Protocol(_) => Status::BadRequest,
        _ => Status::Internal,
    }
}

/// Answers one request frame body with a full response frame. Never panics on
/// malformed input.
pub fn respond(provider: &dyn EmbeddingProvider, body: &[u8]) -> Vec<u8> {
    let request = match Request::decode(body) {
        Ok(r) => r,
        Err((status, msg)) => return response_frame(status, msg.as_bytes()),
    };
    let result = match request {
        Request::Handshake => Ok(Payload::Manifest(provider.manifest().clone())),
        Request::EmbedText { space, text } => provider.embed_text(&text, space).map(Payload::Vector),
        Request::EmbedImageGlobal(img) => provider.embed_image_global(&img).map(Payload::Vector),
        Request::EmbedImageDense { image, .. } => provider.embed_image_dense(&image).map(Payload::Dense),
        Request::ExtractKeypoints(img) => provider.extract_keypoints(&img).map(Payload::Keypoints),
        Request::EmbedImageRetrieval(img) => provider.embed_image_retrieval(&img).map(Payload::Vector),
        Request::EmbedAudio { sample_rate, samples } => provider.embed_audio(&samples, sample_rate).map(Payload::Vector),
    };
    match result {
        Ok(p) => response_frame(Status::Ok, &p.encode()),
        Err(e) => response_frame(error_status(&e), e.to_string().as_bytes()),
    }
}

/// Serves any provider over the wire protocol, one thread per connection.
/// Wrapping a [`super::FixtureStore`] gives a loopback server that replays
/// recorded fixtures.
pub struct LoopbackServer {
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn spawn(bind: impl ToSocketAddrs, provider: Arc<dyn EmbeddingProvider>) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                let Ok(stream) = conn else { continue };
                let provider = Arc::clone(&provider);
                thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, provider.as_ref()) {
                        log::debug!("connection closed: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks on the accept loop.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn serve_connection(mut stream: TcpStream, provider: &dyn EmbeddingProvider) -> io::Result<()> {
    stream.set_nodelay(true)?;
    while let Some(body) = read_frame(&mut stream)? {
        stream.write_all(&respond(provider, &body))?;
    }
    Ok(())
}

/// Client for a remote provider. Connections are pooled; the client is safe
/// to share between threads.
pub struct RemoteProvider {
    addr: SocketAddr,
    manifest: ProviderManifest,
    pool: Mutex<Vec<TcpStream>>,
    timeout: Duration,
}

impl RemoteProvider {
    /// Connects and performs the manifest handshake.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ProviderError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| ProviderError::Unavailable("endpoint resolved to no address".into()))?;
        let mut client = Self {
            addr,
            manifest: ProviderManifest {
                provider_id: String::new(),
                version: String::new(),
                modalities: Vec::new(),
                spaces: Vec::new(),
                text_spaces: Vec::new(),
                sample_rates: Vec::new(),
                dense_stride: 0,
            },
            pool: Mutex::new(Vec::new()),
            timeout: Duration::from_secs(60),
        };
        match client.call(&Request::Handshake)? {
            Payload::Manifest(m) => client.manifest = m,
            _ => return Err(protocol("handshake did not return a manifest")),
        }
        Ok(client)
    }

    /// Connects to the endpoint named by [`ENDPOINT_ENV`].
    pub fn from_env() -> Result<Self, ProviderError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| ProviderError::Unavailable(format!("{ENDPOINT_ENV} is not set")))?;
        Self::connect(endpoint.trim_start_matches("tcp://"))
    }

    fn checkout(&self) -> Result<TcpStream, ProviderError> {
        if let Some(s) = self.pool.lock().expect("pool lock").pop() {
            return Ok(s);
        }
        let s = TcpStream::connect_timeout(&self.addr, self.timeout)
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", self.addr)))?;
        s.set_read_timeout(Some(self.timeout))?;
        s.set_nodelay(true)?;
        Ok(s)
    }

    pub fn call(&self, request: &Request) -> Result<Payload, ProviderError> {
        let frame = request.encode()?;
        let mut stream = self.checkout()?;
        stream
            .write_all(&frame)
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let body = read_frame(&mut stream)
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?
            .ok_or_else(|| ProviderError::Unavailable("connection closed".into()))?;
        self.pool.lock().expect("pool lock").push(stream);
        let (&status, rest) = body.split_first().ok_or_else(|| protocol("empty response"))?;
        match Status::from_u8(status) {
            Some(Status::Ok) => Payload::decode(rest),
            Some(s) => {
                let msg = String::from_utf8_lossy(rest).into_owned();
                Err(match s {
                    Status::Unsupported => ProviderError::Unavailable(format!("unsupported: {msg}")),
                    _ => ProviderError::Protocol(format!("{s:?}: {msg}")),
                })
            }
            None => Err(protocol(format!("unknown status {status}"))),
        }
    }

    fn vector(&self, request: Request, space: EmbeddingSpace) -> Result<EmbeddingVector, ProviderError> {
        match self.call(&request)? {
            Payload::Vector(v) if v.space() == space => {
                self.manifest.check_dim(&v)?;
                Ok(v)
            }
            Payload::Vector(v) => Err(ProviderError::CrossSpace(space, v.space())),
            _ => Err(protocol("expected a vector payload")),
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn manifest(&self) -> &ProviderManifest {
        &self.manifest
    }

    fn embed_text(&self, query: &str, space: EmbeddingSpace) -> Result<EmbeddingVector, ProviderError> {
        if query.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.manifest.require_text_space(space)?;
        self.vector(
            Request::EmbedText {
                space,
                text: query.to_string(),
            },
            space,
        )
    }

    fn embed_audio(&self, samples: &[i16], sample_rate: u32) -> Result<EmbeddingVector, ProviderError> {
        self.manifest.require(Modality::Audio)?;
        if samples.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        if !self.manifest.sample_rates.contains(&sample_rate) {
            return Err(ProviderError::UnsupportedSampleRate(sample_rate));
        }
        self.vector(
            Request::EmbedAudio {
                sample_rate,
                samples: samples.to_vec(),
            },
            EmbeddingSpace::AudioText,
        )
    }

    fn embed_image_global(&self, image: &RgbImage) -> Result<EmbeddingVector, ProviderError> {
        self.manifest.require(Modality::ImageGlobal)?;
        self.vector(Request::EmbedImageGlobal(image.clone()), EmbeddingSpace::FrameText)
    }

    fn embed_image_dense(&self, image: &RgbImage) -> Result<DenseFeatureFrame, ProviderError> {
        self.manifest.require(Modality::PixelDense)?;
        let request = Request::EmbedImageDense {
            stride: 0,
            image: image.clone(),
        };
        match self.call(&request)? {
            Payload::Dense(d) => {
                let expected = self.manifest.dim_of(EmbeddingSpace::PixelText).unwrap_or(0);
                if d.dim() != expected {
                    return Err(ProviderError::DimensionMismatch { expected, got: d.dim() });
                }
                Ok(d)
            }
            _ => Err(protocol("expected a dense payload")),
        }
    }

    fn extract_keypoints(&self, image: &RgbImage) -> Result<KeypointSet, ProviderError> {
        self.manifest.require(Modality::Keypoints)?;
        match self.call(&Request::ExtractKeypoints(image.clone()))? {
            Payload::Keypoints(k) => Ok(k),
            _ => Err(protocol("expected a keypoint payload")),
        }
    }

    fn embed_image_retrieval(&self, image: &RgbImage) -> Result<EmbeddingVector, ProviderError> {
        self.manifest.require(Modality::ImageRetrieval)?;
        self.vector(Request::EmbedImageRetrieval(image.clone()), EmbeddingSpace::Retrieval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([x as u8, y as u8, 7]));
        let requests = vec![
            Request::Handshake,
            Request::EmbedText {
                space: EmbeddingSpace::AudioText,
                text: "glass breaking".into(),
            },
            Request::EmbedImageDense { stride: 4, image: img.clone() },
            Request::ExtractKeypoints(img),
            Request::EmbedAudio {
                sample_rate: 16000,
                samples: vec![0, -3, 32767, -32768],
            },
        ];
        for r in requests {
            let frame = r.encode().unwrap();
            let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
            assert_eq!(len, frame.len() - 4);
            assert_eq!(Request::decode(&frame[4..]).unwrap(), r);
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let mut frame = Request::Handshake.encode().unwrap();
        frame[5] = 9;
        assert_eq!(Request::decode(&frame[4..]).unwrap_err().0, Status::VersionMismatch);
    }

    #[test]
    fn vector_payload_is_bit_exact() {
        let v = EmbeddingVector::normalized(EmbeddingSpace::Retrieval, vec![0.3, -0.4, 0.5, 0.1]).unwrap();
        let decoded = Payload::decode(&Payload::Vector(v.clone()).encode()).unwrap();
        assert_eq!(decoded, Payload::Vector(v));
    }

    #[test]
    fn drifted_vector_is_renormalized() {
        let mut bytes = vec![KIND_VECTOR, EmbeddingSpace::Retrieval.tag()];
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(3.0f32.to_le_bytes());
        bytes.extend(4.0f32.to_le_bytes());
        let Payload::Vector(v) = Payload::decode(&bytes).unwrap() else { panic!() };
        assert!((v.norm() - 1.0).abs() < 1e-6);
        assert!((v.values()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn truncated_payloads_error() {
        let v = EmbeddingVector::normalized(EmbeddingSpace::Retrieval, vec![1.0, 2.0]).unwrap();
        let bytes = Payload::Vector(v).encode();
        for cut in 0..bytes.len() {
            assert!(Payload::decode(&bytes[..cut]).is_err());
        }
    }
}
