use std::path::PathBuf;
use std::sync::Arc;

use arbor_core::flowfield::FlowParams;
use arbor_server::{router, AnnotationStore, ServerConfig};
use clap::Parser;

/// Serve images, annotations, flow fields and traces to the annotation tool.
#[derive(Parser)]
#[command(name = "arbor-server", version)]
struct Args {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Branch3D JSON, typically `out/branch3d.json` from the pipeline.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for version records and cached flow fields.
    #[arg(long, default_value = ".arbor-server")]
    state: PathBuf,
    /// JSON file overriding the default flow parameters.
    #[arg(long)]
    flow_params: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args = Args::parse();
    let flow: FlowParams = match &args.flow_params {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => FlowParams::default(),
    };
    let store = AnnotationStore::open(ServerConfig {
        images: args.images,
        annotations: args.annotations,
        cameras: args.cameras,
        masks: args.masks,
        model: args.model,
        state: args.state,
        flow,
    })?;
    let listener = tokio::net::TcpListener::bind(&args.bind).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(store))).await?;
    Ok(())
}
