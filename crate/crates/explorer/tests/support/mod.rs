#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};

use voxfit_core::design::{build_design, DesignMatrix, DesignSpec, Term};
use voxfit_core::fit::{fit_volume, Kernel, ModelSpec, SvrHyper};
use voxfit_core::maps::{best_fit_labels, Connectivity};
use voxfit_core::metrics::{evaluate_volume, Metric, PrssParams};
use voxfit_core::synth::{generate, SynthSpec};
use voxfit_core::volume::ObservationVolume;
use voxfit_explorer::{bind, Session};

pub fn design_spec() -> DesignSpec {
    DesignSpec {
        correctors: vec![Term::new("age", 2), Term::new("sex", 1)],
        predictors: vec![Term::new("index", 3)],
        standardize: true,
    }
}

pub struct Fixture {
    pub session: Session,
    pub design: DesignMatrix,
    /// Linear index of a masked voxel forced to a constant series.
    pub flat_voxel: usize,
}

/// Small synthetic session with GLM and RBF-SVR fits, their p-value maps
/// and a best-fit label map.
pub fn session(dims: [usize; 3], n_subjects: usize, with_svr: bool) -> Fixture {
    let spec = SynthSpec {
        dims,
        n_subjects,
        effect_size: 2,
        effect_sd: 0.1,
        seed: 3,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    let obs = &data.observations;
    let n = obs.n_subjects();
    let flat_voxel = obs.masked_voxels().next().unwrap();
    let mut series = Vec::with_capacity(obs.geometry().n_voxels() * n);
    for v in 0..obs.geometry().n_voxels() {
        if v == flat_voxel {
            series.extend(std::iter::repeat_n(0.5, n));
        } else {
            series.extend_from_slice(obs.series(v));
        }
    }
    let obs = ObservationVolume::new(obs.geometry().clone(), n, series, Some(data.brain_mask.clone())).unwrap();
    let design = build_design(&data.covariates, &design_spec()).unwrap();

    let mut models = vec![("glm".to_string(), fit_volume(&obs, &design, ModelSpec::Glm).unwrap())];
    if with_svr {
        let svr = ModelSpec::Svr {
            kernel: Kernel::Rbf { gamma: 0.5 },
            hyper: SvrHyper { epsilon: 0.05, c: 1.0 },
        };
        models.push(("svr-rbf".to_string(), fit_volume(&obs, &design, svr).unwrap()));
    }
    let maps: Vec<_> = models
        .iter()
        .map(|(name, f)| {
            let m = evaluate_volume(f, &obs, Metric::FPvalue, &PrssParams::default()).unwrap();
            (format!("{name}.f-pvalue"), m)
        })
        .collect();
    let labels = if maps.len() >= 2 {
        let legend: Vec<String> = models.iter().map(|(n, _)| n.clone()).collect();
        let stat: Vec<_> = maps.iter().map(|(_, m)| m.clone()).collect();
        Some(best_fit_labels(&stat, &legend, None, 1, Connectivity::Six).unwrap())
    } else {
        None
    };
    Fixture {
        session: Session::new(obs, models, maps, labels).unwrap(),
        design,
        flat_voxel,
    }
}

/// Starts the service on an ephemeral port in a background runtime.
pub fn spawn(session: Session) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let server = bind(session, "127.0.0.1:0", None).await.unwrap();
            tx.send(server.local_addr()).unwrap();
            server.serve().await.unwrap();
        });
    });
    rx.recv().unwrap()
}

pub struct HttpResponse {
    pub status: u16,
    pub content_type: String,
    pub body: String,
}

impl HttpResponse {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("invalid JSON ({e}): {}", self.body))
    }
}

/// Minimal HTTP/1.1 GET over a raw socket.
pub fn get(addr: SocketAddr, path: &str) -> HttpResponse {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, body) = text.split_once("\r\n\r\n").expect("header terminator");
    let mut lines = head.lines();
    let status = lines.next().unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    let mut content_type = String::new();
    let mut chunked = false;
    for line in lines {
        let (k, v) = line.split_once(':').unwrap();
        match k.trim().to_ascii_lowercase().as_str() {
            "content-type" => content_type = v.trim().to_string(),
            "transfer-encoding" => chunked = v.trim().eq_ignore_ascii_case("chunked"),
            _ => {}
        }
    }
    let body = if chunked { dechunk(body) } else { body.to_string() };
    HttpResponse {
        status,
        content_type,
        body,
    }
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let size = usize::from_str_radix(size.trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.push_str(&rest[..size]);
        s = &rest[size + 2..];
    }
}
