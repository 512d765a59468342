//! Encodes one of each protocol message, prints the frame bytes and decodes
//! them back.
//!
//! ```text
//! cargo run --example wire_codec
//! ```

use objxfer::transport::{SyncStatus, TransferMessage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let messages = [
        TransferMessage::Connect {
            object_size: 1 << 20,
            slot_count: 256,
            session_id: 0x0123_4567_89ab_cdef,
            resume: false,
        },
        TransferMessage::NewFile {
            file_id: 3,
            size: 5 << 20,
            mtime: 1_600_000_000,
            path: "dir/f00003.dat".into(),
        },
        TransferMessage::FileId {
            file_id: 3,
            sink_fd: 9,
            skip: false,
        },
        TransferMessage::NewBlock {
            file_id: 3,
            block_index: 4,
            data: b"hello".to_vec(),
        },
        TransferMessage::BlockSync {
            file_id: 3,
            block_index: 4,
            status: SyncStatus::Written,
        },
        TransferMessage::FileClose { file_id: 3 },
        TransferMessage::Bye,
    ];
    for msg in &messages {
        let frame = msg.encode()?;
        let back = TransferMessage::decode(&frame)?;
        assert_eq!(&back, msg);
        println!("{:<11} {:>3} B  {}", msg.kind().name(), frame.len(), hex::encode(&frame));
    }
    Ok(())
}
