//! WebSocket transport at `/ws`.
//!
//! A connection starts unbound. `start_run` creates a run and binds the
//! connection to it; `subscribe` binds to an existing run and replays from
//! the requested sequence. Either one replaces the previous binding and
//! streams the run's messages until the run finishes. Every other command
//! applies to the bound run, and its reply is interleaved with the stream.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use super::engine::{Engine, ServiceError};
use super::protocol::{ClientCommand, ClientMessage, ServerBody, ServerMessage, PROTOCOL_VERSION};

pub fn router(engine: Engine) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(engine)
}

/// Serves the router on `listener` until the process stops.
pub async fn serve(listener: TcpListener, engine: Engine) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(engine): State<Engine>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, engine))
}

struct Connection {
    engine: Engine,
    run: Option<String>,
    forwarder: Option<JoinHandle<()>>,
    out: mpsc::UnboundedSender<ServerMessage>,
}

async fn connection(socket: WebSocket, engine: Engine) {
    let (mut sink, mut incoming) = socket.split();
    let (out, mut outgoing) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(message) = outgoing.recv().await {
            if sink.send(Message::Text(message.to_json().into())).await.is_err() {
                break;
            }
        }
    });
    let mut conn = Connection { engine, run: None, forwarder: None, out };
    while let Some(Ok(frame)) = incoming.next().await {
        let text = match frame {
            Message::Text(text) => text,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match serde_json::from_str::<ClientMessage>(text.as_str()) {
            Ok(message) if message.v != PROTOCOL_VERSION => Some(ServerMessage::error(
                conn.bound(),
                "unsupported_version",
                format!("protocol version {} is not supported", message.v),
            )),
            Ok(message) => conn.handle(message.command).await,
            Err(e) => Some(ServerMessage::error(conn.bound(), "invalid_request", e.to_string())),
        };
        if let Some(reply) = reply {
            if conn.out.send(reply).is_err() {
                break;
            }
        }
    }
    if let Some(forwarder) = conn.forwarder.take() {
        forwarder.abort();
    }
    drop(conn);
    let _ = writer.await;
}

impl Connection {
    fn bound(&self) -> String {
        self.run.clone().unwrap_or_default()
    }

    fn bind(&mut self, run: String, from: u64) -> Result<(), ServiceError> {
        let subscription = self.engine.subscribe(&run, from)?;
        if let Some(previous) = self.forwarder.take() {
            previous.abort();
        }
        let out = self.out.clone();
        self.forwarder = Some(tokio::spawn(async move {
            let mut subscription = subscription;
            while let Some(message) = subscription.next().await {
                if out.send(message).is_err() {
                    break;
                }
            }
        }));
        self.run = Some(run);
        Ok(())
    }

    fn ack(&self, command: &str, accepted: bool) -> ServerMessage {
        ServerMessage::reply(self.bound(), ServerBody::Ack { command: command.to_string(), accepted })
    }

    async fn handle(&mut self, command: ClientCommand) -> Option<ServerMessage> {
        match self.dispatch(command).await {
            Ok(reply) => reply,
            Err(e) => Some(ServerMessage::error(self.bound(), e.code(), e.to_string())),
        }
    }

    async fn dispatch(&mut self, command: ClientCommand) -> Result<Option<ServerMessage>, ServiceError> {
        if let ClientCommand::StartRun { text } = &command {
            let run = self.engine.start_run(text)?;
            // The ack goes out before the stream so the client learns the id first.
            let _ = self
                .out
                .send(ServerMessage::reply(&run, ServerBody::Ack { command: "start_run".into(), accepted: true }));
            self.bind(run, 0)?;
            return Ok(None);
        }
        if let ClientCommand::Subscribe { run, from } = command {
            self.bind(run, from)?;
            return Ok(Some(self.ack("subscribe", true)));
        }
        let run = self
            .run
            .clone()
            .ok_or_else(|| ServiceError::InvalidRequest("no run bound; send start_run or subscribe first".into()))?;
        let reply = match command {
            ClientCommand::UserMessage { text, refs } => {
                self.engine.send_user_message(&run, &text, refs).await?;
                self.ack("user_message", true)
            }
            ClientCommand::Interrupt => {
                let accepted = self.engine.send_interrupt(&run)?;
                self.ack("interrupt", accepted)
            }
            ClientCommand::TraceRequest { unit, span } => {
                // The result arrives on the stream as trace_progress and trace_result.
                self.engine.request_trace(&run, unit, span).await?;
                self.ack("trace_request", true)
            }
            ClientCommand::FocusQuery { action } => {
                let bundle = self.engine.query_focus(&run, action)?;
                ServerMessage::reply(&run, ServerBody::FocusBundle { bundle })
            }
            ClientCommand::InfoQuery { unit } => {
                let unit = self.engine.query_info(&run, unit)?;
                ServerMessage::reply(&run, ServerBody::InfoResult { unit })
            }
            ClientCommand::Export => {
                let report = self.engine.export(&run)?;
                ServerMessage::reply(&run, ServerBody::ExportResult { report })
            }
            ClientCommand::StartRun { .. } | ClientCommand::Subscribe { .. } => unreachable!("handled above"),
        };
        Ok(Some(reply))
    }
}
