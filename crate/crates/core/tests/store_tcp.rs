use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Barrier};
use std::thread;

use stagex::net::{Endpoint, StoreClient};
use stagex::store::{RunningServer, Server, ServerConfig};
use stagex::wire::{self, Request, Status};

#[test]
fn malformed_request_gets_status_and_close() {
    let server = RunningServer::start_local().unwrap();
    let mut s = TcpStream::connect(server.addr).unwrap();
    s.write_all(b"XXXX\x07\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
    let resp = wire::read_response(&mut s).unwrap();
    assert_eq!(resp.status, Status::Malformed);
    let mut rest = Vec::new();
    assert_eq!(s.read_to_end(&mut rest).unwrap(), 0);

    // the server keeps serving other connections
    let mut c = StoreClient::connect(&server.addr.into()).unwrap();
    c.ping().unwrap();
}

#[test]
fn value_on_get_is_malformed() {
    let server = RunningServer::start_local().unwrap();
    let mut s = TcpStream::connect(server.addr).unwrap();
    let mut frame = Vec::new();
    frame.extend_from_slice(b"SRX1\x02");
    frame.extend_from_slice(&1u32.to_le_bytes());
    frame.push(b'k');
    frame.extend_from_slice(&1u64.to_le_bytes());
    frame.push(b'v');
    s.write_all(&frame).unwrap();
    assert_eq!(wire::read_response(&mut s).unwrap().status, Status::Malformed);
}

#[test]
fn pipelined_requests_answered_in_order() {
    let server = RunningServer::start_local().unwrap();
    let mut s = TcpStream::connect(server.addr).unwrap();
    let mut batch = Vec::new();
    batch.extend(wire::encode_request(&Request::put("a", "1")).unwrap());
    batch.extend(wire::encode_request(&Request::get("a")).unwrap());
    batch.extend(wire::encode_request(&Request::exists("b")).unwrap());
    s.write_all(&batch).unwrap();
    assert_eq!(wire::read_response(&mut s).unwrap().status, Status::Ok);
    assert_eq!(&wire::read_response(&mut s).unwrap().value[..], b"1");
    assert_eq!(wire::read_response(&mut s).unwrap().status, Status::NotFound);
}

#[test]
fn memory_cap_returns_server_error() {
    let mut cfg = ServerConfig::new("127.0.0.1:0");
    cfg.max_memory = 100;
    let server = Server::bind(&cfg).unwrap().spawn();
    let mut c = StoreClient::connect(&server.addr.into()).unwrap();
    c.put("small", vec![0u8; 50]).unwrap();
    let err = c.put("big", vec![0u8; 60]).unwrap_err();
    assert!(err.to_string().contains("SERVER_ERROR") || err.to_string().to_lowercase().contains("server"), "{err}");
    assert_eq!(c.status().unwrap(), (1, 55));
}

/// Eight connections interleave PUT and GET on shared keys. Every GET must
/// return a value some writer wrote to that key and never an older write of
/// a writer than one already observed; private keys read back the latest
/// write.
#[test]
fn concurrent_connections_are_per_key_linearizable() {
    const CONNS: usize = 8;
    const ROUNDS: usize = 300;
    let server = RunningServer::start_local().unwrap();
    let ep: Endpoint = server.addr.into();
    let barrier = Arc::new(Barrier::new(CONNS));
    let handles: Vec<_> = (0..CONNS)
        .map(|t| {
            let ep = ep.clone();
            let barrier = barrier.clone();
            thread::spawn(move || {
                let mut c = StoreClient::connect(&ep).unwrap();
                barrier.wait();
                // last_seen[key][writer]: rounds of one writer on one key only
                // move forward, so a read must never go back to an older one
                let mut last_seen = vec![vec![-1i64; CONNS]; 4];
                for round in 0..ROUNDS {
                    let slot = round % 4;
                    let shared = format!("shared/{slot}");
                    c.put(shared.clone(), format!("{t}:{round}")).unwrap();
                    let got = c.get(shared).unwrap().expect("shared key exists after our put");
                    let text = std::str::from_utf8(&got).unwrap();
                    let (w, r) = text.split_once(':').unwrap();
                    let (w, r): (usize, i64) = (w.parse().unwrap(), r.parse().unwrap());
                    assert!(w < CONNS && (r as usize) < ROUNDS && r as usize % 4 == slot);
                    assert!(r >= last_seen[slot][w], "stale read of {text} after round {}", last_seen[slot][w]);
                    last_seen[slot][w] = r;
                    if w == t {
                        assert_eq!(r, round as i64);
                    }

                    let own = format!("own/{t}");
                    c.put(own.clone(), round.to_string()).unwrap();
                    assert_eq!(c.get(own).unwrap().unwrap(), round.to_string().as_bytes());
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let mut c = StoreClient::connect(&ep).unwrap();
    for t in 0..CONNS {
        assert_eq!(c.get(format!("own/{t}")).unwrap().unwrap(), (ROUNDS - 1).to_string().as_bytes());
    }
    assert_eq!(c.list("shared/").unwrap().len(), 4);
}
