use std::io::{Read, Write};
use std::net::TcpStream;
use std::thread;

use pcsi_core::net::{
    decode_answer, decode_error, decode_params, encode_frame, encode_query, read_frame,
    remote_retrieve, Client, ErrorCode, FrameKind, NetError, Server, HEADER_LEN, MAX_PAYLOAD,
    QUERY_HEADER_LEN,
};
use pcsi_core::protocol::{run_local, sample_instance, server_answer, SideInformation};
use pcsi_core::{Database, FieldParams, Model, ProtocolParams, Query};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn worked() -> (Database, ProtocolParams) {
    let f = FieldParams::new(5).unwrap();
    let db = Database::new(f, vec![vec![f.elem(2)], vec![f.elem(3)], vec![f.elem(4)]]).unwrap();
    let params = ProtocolParams::canonical(5, 3, 1, 1, Model::I).unwrap();
    (db, params)
}

fn raw_exchange(stream: &mut TcpStream, kind: u8, payload: &[u8]) -> (u8, Vec<u8>) {
    stream
        .write_all(&encode_frame(kind, payload).unwrap())
        .unwrap();
    let frame = read_frame(stream, MAX_PAYLOAD).unwrap().unwrap();
    (frame.kind, frame.payload)
}

#[test]
fn hello_advertises_parameters() {
    let (db, params) = worked();
    let handle = Server::bind("127.0.0.1:0", db, params.clone())
        .unwrap()
        .spawn()
        .unwrap();
    let mut s = TcpStream::connect(handle.addr()).unwrap();
    let (kind, payload) = raw_exchange(&mut s, FrameKind::Hello as u8, &[]);
    assert_eq!(kind, FrameKind::Params as u8);
    let advertised = decode_params(&payload).unwrap();
    assert_eq!(advertised, params);
    assert_eq!(advertised.field().modulus(), 5);
    assert_eq!(advertised.k(), 3);
    assert_eq!(advertised.side_info_size(), 1);
    assert_eq!(advertised.message_len(), 1);
    assert_eq!(advertised.model(), Model::I);
    let omegas: Vec<u16> = advertised
        .code()
        .omegas()
        .iter()
        .map(|e| e.value())
        .collect();
    assert_eq!(omegas, vec![0, 1, 2]);
}

#[test]
fn worked_query_over_the_wire() {
    let (db, params) = worked();
    let f = params.field();
    let handle = Server::bind("127.0.0.1:0", db, params)
        .unwrap()
        .spawn()
        .unwrap();
    let query = Query {
        model: Model::I,
        rows: vec![
            vec![f.elem(1), f.elem(3), f.elem(1)],
            vec![f.elem(0), f.elem(3), f.elem(2)],
        ],
    };
    let mut s = TcpStream::connect(handle.addr()).unwrap();
    let payload = encode_query(&query).unwrap();
    let (kind, reply) = raw_exchange(&mut s, FrameKind::Query as u8, &payload);
    assert_eq!(kind, FrameKind::Answer as u8);
    assert_eq!(reply, vec![2, 0, 1, 0, 0, 0, 2, 0]);
    let answer = decode_answer(&reply, f).unwrap();
    let vals: Vec<Vec<u16>> = answer
        .values
        .iter()
        .map(|v| v.iter().map(|e| e.value()).collect())
        .collect();
    assert_eq!(vals, vec![vec![0], vec![2]]);

    // replaying the captured query yields byte-identical answers
    let (_, again) = raw_exchange(&mut s, FrameKind::Query as u8, &payload);
    assert_eq!(again, reply);
}

#[test]
fn malformed_frames_get_errors_and_the_connection_survives() {
    let (db, params) = worked();
    let f = params.field();
    let handle = Server::bind("127.0.0.1:0", db, params)
        .unwrap()
        .spawn()
        .unwrap();
    let mut s = TcpStream::connect(handle.addr()).unwrap();

    // K mismatch
    let wide = Query {
        model: Model::I,
        rows: vec![vec![f.elem(1); 4]],
    };
    let (kind, payload) = raw_exchange(
        &mut s,
        FrameKind::Query as u8,
        &encode_query(&wide).unwrap(),
    );
    assert_eq!(kind, FrameKind::Error as u8);
    assert_eq!(payload[0], ErrorCode::Dimension as u8);
    assert!(matches!(
        decode_error(&payload),
        NetError::Remote {
            code: Some(ErrorCode::Dimension),
            ..
        }
    ));

    // element >= q
    let mut bad = vec![0u8, 1, 0, 3, 0];
    for v in [1u16, 7, 1] {
        bad.extend_from_slice(&v.to_le_bytes());
    }
    let (kind, payload) = raw_exchange(&mut s, FrameKind::Query as u8, &bad);
    assert_eq!(kind, FrameKind::Error as u8);
    assert_eq!(payload[0], ErrorCode::ElementOutOfRange as u8);
    assert_eq!(&payload[1..], b"element 7 out of range for GF(5)");

    // unknown kind
    let (kind, payload) = raw_exchange(&mut s, 0x42, b"");
    assert_eq!(kind, FrameKind::Error as u8);
    assert_eq!(payload[0], ErrorCode::UnknownKind as u8);

    // bad magic: header consumed, error returned, stream stays aligned
    let mut frame = encode_frame(FrameKind::Hello as u8, &[]).unwrap();
    frame[..4].copy_from_slice(b"XXXX");
    s.write_all(&frame).unwrap();
    let reply = read_frame(&mut s, MAX_PAYLOAD).unwrap().unwrap();
    assert_eq!(reply.kind, FrameKind::Error as u8);
    assert_eq!(reply.payload[0], ErrorCode::Malformed as u8);

    // a server-bound frame kind the server does not accept
    let (kind, payload) = raw_exchange(&mut s, FrameKind::Answer as u8, &[0, 0, 0, 0]);
    assert_eq!(kind, FrameKind::Error as u8);
    assert_eq!(payload[0], ErrorCode::UnexpectedFrame as u8);

    // still serving
    let (kind, _) = raw_exchange(&mut s, FrameKind::Hello as u8, &[]);
    assert_eq!(kind, FrameKind::Params as u8);
    assert_eq!(handle.queries_answered(), 0);
}

#[test]
fn truncated_frame_closes_only_that_connection() {
    let (db, params) = worked();
    let handle = Server::bind("127.0.0.1:0", db, params)
        .unwrap()
        .spawn()
        .unwrap();
    {
        let mut s = TcpStream::connect(handle.addr()).unwrap();
        let frame = encode_frame(FrameKind::Query as u8, &[0u8; 9]).unwrap();
        s.write_all(&frame[..12]).unwrap();
        s.shutdown(std::net::Shutdown::Write).unwrap();
        let mut rest = Vec::new();
        s.read_to_end(&mut rest).unwrap();
        let (reply, _) = pcsi_core::net::decode_frame(&rest).unwrap();
        assert_eq!(reply.kind, FrameKind::Error as u8);
    }
    assert!(Client::connect(handle.addr()).is_ok());
}

#[test]
fn params_mismatch_aborts_before_any_query() {
    let f = FieldParams::new(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let server_params = ProtocolParams::canonical(5, 4, 1, 1, Model::I).unwrap();
    let db4 = Database::random(f, 4, 1, &mut rng).unwrap();
    let handle = Server::bind("127.0.0.1:0", db4, server_params)
        .unwrap()
        .spawn()
        .unwrap();

    let (db3, local) = worked();
    let si = SideInformation::from_database(&db3, vec![1], vec![f.elem(2)], 0).unwrap();
    let mut client = Client::connect(handle.addr()).unwrap();
    let err = client.retrieve(&si, &local, &mut rng).unwrap_err();
    assert!(matches!(err, NetError::ParamsMismatch(_)));
    assert_eq!(client.traffic().queries_sent, 0);
    assert!(matches!(
        remote_retrieve(handle.addr(), &si, &local, &mut rng),
        Err(NetError::ParamsMismatch(_))
    ));
    assert_eq!(handle.queries_answered(), 0);
}

#[test]
fn byte_accounting_matches_the_wire_format() {
    for (model, m_side, msg_len) in [(Model::I, 2, 3), (Model::II, 2, 5), (Model::II, 4, 1)] {
        let params = ProtocolParams::canonical(7, 4, m_side, msg_len, model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let db = Database::random(params.field(), 4, msg_len, &mut rng).unwrap();
        let handle = Server::bind("127.0.0.1:0", db.clone(), params.clone())
            .unwrap()
            .spawn()
            .unwrap();
        let mut client = Client::connect(handle.addr()).unwrap();
        let hello = client.traffic();
        assert_eq!(hello.bytes_sent, HEADER_LEN as u64);
        assert_eq!(hello.bytes_received, (HEADER_LEN + 9 + 2 * 4) as u64);

        let si = sample_instance(&params, &db, &mut rng).unwrap();
        let r = params.num_rows();
        let got = client.retrieve(&si, &params, &mut rng).unwrap();
        assert_eq!(got.recovered, db.messages()[si.demand]);
        let t = client.traffic();
        assert_eq!(
            t.bytes_sent - hello.bytes_sent,
            (HEADER_LEN + QUERY_HEADER_LEN + 2 * r * 4) as u64
        );
        assert_eq!(
            t.bytes_received - hello.bytes_received,
            (HEADER_LEN + 4 + 2 * r * msg_len) as u64
        );
        assert_eq!(got.answer_element_bytes, 2 * r * msg_len);
    }
}

#[test]
fn remote_equals_local_for_seeded_runs() {
    for model in [Model::I, Model::II] {
        let params = ProtocolParams::canonical(5, 4, 2, 2, model).unwrap();
        let db =
            Database::random(params.field(), 4, 2, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let handle = Server::bind("127.0.0.1:0", db.clone(), params.clone())
            .unwrap()
            .spawn()
            .unwrap();
        for seed in 0..20 {
            let local = run_local(&params, &db, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let si = sample_instance(&params, &db, &mut rng).unwrap();
            let remote = remote_retrieve(handle.addr(), &si, &params, &mut rng).unwrap();
            assert_eq!(remote, local.recovered);
        }
    }
}

#[test]
fn concurrent_clients() {
    let params = ProtocolParams::canonical(11, 6, 2, 8, Model::I).unwrap();
    let db = Database::random(params.field(), 6, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let handle = Server::bind("127.0.0.1:0", db.clone(), params.clone())
        .unwrap()
        .spawn()
        .unwrap();
    let addr = handle.addr();
    let workers: Vec<_> = (0..8u64)
        .map(|t| {
            let (db, params) = (db.clone(), params.clone());
            thread::spawn(move || {
                let mut client = Client::connect(addr).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(t);
                for _ in 0..25 {
                    let si = sample_instance(&params, &db, &mut rng).unwrap();
                    let got = client.retrieve(&si, &params, &mut rng).unwrap();
                    assert_eq!(got.recovered, db.messages()[si.demand]);
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    assert_eq!(handle.queries_answered(), 200);
}

#[test]
fn server_answers_match_in_process_answers() {
    let params = ProtocolParams::canonical(13, 5, 1, 3, Model::I).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let db = Database::random(params.field(), 5, 3, &mut rng).unwrap();
    let handle = Server::bind("127.0.0.1:0", db.clone(), params.clone())
        .unwrap()
        .spawn()
        .unwrap();
    let mut client = Client::connect(handle.addr()).unwrap();
    for _ in 0..10 {
        let si = sample_instance(&params, &db, &mut rng).unwrap();
        let (query, _) = pcsi_core::protocol::client_build_query(&si, &params, &mut rng).unwrap();
        let reply = client
            .exchange(FrameKind::Query as u8, &encode_query(&query).unwrap())
            .unwrap();
        let remote = decode_answer(&reply.payload, params.field()).unwrap();
        assert_eq!(remote, server_answer(&query, &db).unwrap());
    }
}
