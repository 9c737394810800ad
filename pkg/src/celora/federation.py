"""Round-loop protocol simulation: server, clients, message exchange,
and metrics capture.

Transport is in-process but every client/server payload goes through an
append-ordered message log, which makes the privacy surface auditable:
in the core method the only client uploads are one mixture summary at the
start plus one r x r core stack per round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import adapter as ad
from . import aggregation as agg
from . import training
from .data import Dataset, PartitionSpec, dirichlet_partition, load_csv, synth_blobs
from .similarity_data import GmmSet, data_similarity_matrix, fit_gmm_set
from .similarity_model import ProbeSet, model_similarity_matrix

# Seed-derivation tags; every random stream is a child of the master seed.
_TAG_DATASET = 1
_TAG_PARTITION = 2
_TAG_FEATURIZER = 3
_TAG_ADAPTER = 4
_TAG_PROBE = 5
_TAG_SPLIT = 6
_TAG_GMM = 7
_TAG_TRAIN = 8


def child_seed(master, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), *[int(t) for t in tags]])


@dataclass
class Message:
    kind: str  # gmm_upload | c_upload | ab_upload | b_upload | cbar_download | ab_download | b_download
    sender: str  # "client" or "server"
    client_id: int
    round: int
    payload: bytes

    @property
    def num_bytes(self) -> int:
        return len(self.payload)


@dataclass
class ClientState:
    id: int
    train_X: np.ndarray
    train_y: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray
    model: training.LocalModel
    sample_count: int
    gmm_set: GmmSet | None = None
    c_bar: list | None = None  # aggregate received at the end of last round

    def core_stack(self):
        return [layer.C.copy() for layer in self.model.layers]


@dataclass
class RoundRecord:
    round: int
    client_metrics: dict  # id -> {train_loss, eval_loss, eval_accuracy}
    uploaded_params: dict  # id -> int
    weights: list | None  # aggregation weight snapshot (personalized mode)

    def to_json(self) -> str:
        obj = {
            "round": self.round,
            "clients": {str(k): v for k, v in sorted(self.client_metrics.items())},
            "uploaded_params": {str(k): v for k, v in sorted(self.uploaded_params.items())},
            "weights": self.weights,
        }
        return json.dumps(obj, sort_keys=True)


@dataclass
class ServerState:
    num_clients: int
    probe: ProbeSet
    model_coeff: float
    include_self: bool
    sigma: float | None = None
    s_data: np.ndarray | None = None
    round: int = 0
    history: list = field(default_factory=list)
    message_log: list = field(default_factory=list)

    def log(self, msg: Message):
        self.message_log.append(msg)


def _build_dataset(cfg) -> Dataset:
    ds = cfg["dataset"]
    if ds["kind"] == "synth":
        return synth_blobs(
            classes=ds["classes"],
            n=ds["samples"],
            d_raw=ds["raw_dim"],
            sep=ds["sep"],
            noise=ds["noise"],
            seed=child_seed(cfg["seed"], _TAG_DATASET),
        )
    return load_csv(ds["path"], ds["label_column"], ds["has_header"])


def _build_model(cfg, featurizer, num_classes) -> training.LocalModel:
    model_cfg = cfg["model"]
    d = model_cfg["feature_dim"]
    r = model_cfg["rank"]
    L = model_cfg["layers"]
    layers = []
    for l in range(L):
        k = d if l < L - 1 else num_classes
        layers.append(
            ad.init_adapter(d, k, r, seed=child_seed(cfg["seed"], _TAG_ADAPTER, l))
        )
    return training.LocalModel(featurizer=featurizer, layers=layers, num_classes=num_classes)


def setup(cfg) -> tuple[ServerState, list[ClientState]]:
    """Partition the data, build identically initialized client models,
    and create the server.  The one-shot mixture exchange happens at the
    start of the first round so a zero-round run exchanges nothing."""
    dataset = _build_dataset(cfg)
    part = cfg["partition"]
    shards = dirichlet_partition(
        dataset.labels,
        PartitionSpec(
            clients=part["clients"],
            alpha=part["alpha"],
            seed=child_seed(cfg["seed"], _TAG_PARTITION),
            min_samples_per_client=part["min_samples_per_client"],
        ),
    )
    featurizer = training.Featurizer.create(
        dataset.features.shape[1],
        cfg["model"]["feature_dim"],
        seed=child_seed(cfg["seed"], _TAG_FEATURIZER),
    )
    clients = []
    for cid, shard in enumerate(shards):
        rng = np.random.default_rng(child_seed(cfg["seed"], _TAG_SPLIT, cid))
        order = rng.permutation(len(shard))
        n_test = min(max(1, int(round(part["eval_fraction"] * len(shard)))), len(shard) - 1)
        test_idx = shard[order[:n_test]]
        train_idx = shard[order[n_test:]]
        clients.append(
            ClientState(
                id=cid,
                train_X=dataset.features[train_idx],
                train_y=dataset.labels[train_idx],
                test_X=dataset.features[test_idx],
                test_y=dataset.labels[test_idx],
                model=_build_model(cfg, featurizer, dataset.class_count),
                sample_count=len(train_idx),
            )
        )
    sim = cfg["similarity"]
    server = ServerState(
        num_clients=len(clients),
        probe=ProbeSet.create(
            sim["n_probe"], cfg["model"]["rank"], seed=child_seed(cfg["seed"], _TAG_PROBE)
        ),
        model_coeff=sim["model_coeff"],
        include_self=sim["include_self"],
    )
    return server, clients


def one_shot_data_exchange(server: ServerState, clients: list[ClientState], cfg):
    """Clients upload their per-category mixture summaries once; the server
    computes the data-similarity matrix and freezes it for the whole run."""
    sim = cfg["similarity"]
    uploaded = []
    for client in clients:
        feats = client.model.featurizer(client.train_X)
        client.gmm_set = fit_gmm_set(
            feats,
            client.train_y,
            components=sim["gmm_components"],
            seed=cfg["seed"] * 1000003 + _TAG_GMM * 1009 + client.id,
        )
        payload = client.gmm_set.to_json().encode()
        server.log(
            Message(kind="gmm_upload", sender="client", client_id=client.id,
                    round=server.round, payload=payload)
        )
        uploaded.append(GmmSet.from_json(payload.decode()))
    server.s_data, server.sigma = data_similarity_matrix(uploaded, sim["sigma"])


def _mode_flags(method):
    # (train_a, train_b, train_c)
    return {
        "ce-lora": (True, True, True),
        "fedavg-lora": (True, True, False),  # C pinned at identity
        "ffa-lora": (False, True, False),
        "local-only": (True, True, True),
    }[method]


def _uploaded_params(method, model: training.LocalModel) -> int:
    dims = [(l.d, l.k) for l in model.layers]
    r = model.layers[0].r
    if method == "ce-lora":
        return len(dims) * r * r
    if method == "fedavg-lora":
        return sum(r * (d + k) for d, k in dims)
    if method == "ffa-lora":
        return sum(r * k for _, k in dims)
    return 0


def run_round(server: ServerState, clients: list[ClientState], cfg) -> RoundRecord:
    """One protocol round: local fine-tuning, upload, aggregation, download.

    Clients are processed in id order so the message log and all metrics
    are scheduling-independent.
    """
    method = cfg["method"]
    t = server.round
    m = len(clients)
    personalized = method == "ce-lora" and m >= 2
    if personalized and server.s_data is None:
        one_shot_data_exchange(server, clients, cfg)

    train_a, train_b, train_c = _mode_flags(method)
    tcfg_base = cfg["train"]
    metrics = {}
    uploads = {}
    for client in clients:
        tcfg = training.TrainConfig(
            epochs_per_round=tcfg_base["epochs_per_round"],
            batch_size=tcfg_base["batch_size"],
            learning_rate=tcfg_base["learning_rate"],
            seed=child_seed(cfg["seed"], _TAG_TRAIN, client.id, t),
            train_a=train_a,
            train_b=train_b,
            train_c=train_c,
        )
        c_bar = client.c_bar if personalized else None
        fit = training.local_finetune(
            client.model, client.train_X, client.train_y, c_bar, tcfg
        )
        ev = training.evaluate(client.model, client.test_X, client.test_y)
        metrics[client.id] = {
            "train_loss": fit.final_loss,
            "train_accuracy": fit.train_accuracy,
            "eval_loss": ev["loss"],
            "eval_accuracy": ev["accuracy"],
        }

    weights_snapshot = None
    for client in clients:
        if personalized:
            stack = client.core_stack()
            payload = b"".join(np.ascontiguousarray(C).tobytes() for C in stack)
            server.log(Message("c_upload", "client", client.id, t, payload))
            uploads[client.id] = stack
        elif method == "fedavg-lora":
            payload = b"".join(
                np.ascontiguousarray(M).tobytes()
                for layer in client.model.layers
                for M in (layer.A, layer.B)
            )
            server.log(Message("ab_upload", "client", client.id, t, payload))
        elif method == "ffa-lora":
            payload = b"".join(
                np.ascontiguousarray(layer.B).tobytes() for layer in client.model.layers
            )
            server.log(Message("b_upload", "client", client.id, t, payload))

    if personalized:
        core_stacks = [uploads[c.id] for c in clients]
        s_model = model_similarity_matrix(core_stacks, server.probe)
        S = agg.SimilarityMatrix(
            s_data=server.s_data, s_model=s_model, model_coeff=server.model_coeff
        )
        plan = agg.build_plan(S, include_self=server.include_self)
        weights_snapshot = plan.weights.tolist()
        c_bars = agg.personalized_aggregate(plan, core_stacks)
        for client, bar in zip(clients, c_bars):
            payload = b"".join(np.ascontiguousarray(C).tobytes() for C in bar)
            server.log(Message("cbar_download", "server", client.id, t, payload))
            client.c_bar = bar
    elif method == "fedavg-lora":
        As = [[l.A for l in c.model.layers] for c in clients]
        Bs = [[l.B for l in c.model.layers] for c in clients]
        counts = [c.sample_count for c in clients]
        bar_A, bar_B = agg.fedavg_aggregate(As, Bs, counts)
        for client in clients:
            payload = b"".join(
                np.ascontiguousarray(M).tobytes() for pair in zip(bar_A, bar_B) for M in pair
            )
            server.log(Message("ab_download", "server", client.id, t, payload))
            for layer, A_new, B_new in zip(client.model.layers, bar_A, bar_B):
                layer.A = A_new.copy()
                layer.B = B_new.copy()
    elif method == "ffa-lora":
        Bs = [[l.B for l in c.model.layers] for c in clients]
        counts = [c.sample_count for c in clients]
        bar_B = agg.ffa_aggregate(Bs, counts)
        for client in clients:
            payload = b"".join(np.ascontiguousarray(B).tobytes() for B in bar_B)
            server.log(Message("b_download", "server", client.id, t, payload))
            for layer, B_new in zip(client.model.layers, bar_B):
                layer.B = B_new.copy()

    upload_method = method if not (method == "ce-lora" and not personalized) else "local-only"
    uploaded = {c.id: _uploaded_params(upload_method, c.model) for c in clients}
    record = RoundRecord(
        round=t,
        client_metrics=metrics,
        uploaded_params=uploaded,
        weights=weights_snapshot,
    )
    server.history.append(record)
    server.round += 1
    return record


def run_experiment(cfg, metrics_stream=None):
    """Run the configured number of rounds; returns (records, server, clients).

    ``metrics_stream`` is an optional text file object receiving one JSON
    line per round.
    """
    server, clients = setup(cfg)
    records = []
    for _ in range(cfg["train"]["rounds"]):
        record = run_round(server, clients, cfg)
        records.append(record)
        if metrics_stream is not None:
            metrics_stream.write(record.to_json() + "\n")
    return records, server, clients


def audit_uploads(server: ServerState) -> dict:
    """Summarize the client->server surface for privacy checks."""
    per_client: dict[int, dict] = {}
    for msg in server.message_log:
        if msg.sender != "client":
            continue
        entry = per_client.setdefault(msg.client_id, {"gmm_upload": 0, "c_upload": 0, "other": 0})
        if msg.kind in ("gmm_upload", "c_upload"):
            entry[msg.kind] += 1
        else:
            entry["other"] += 1
    return per_client


def save_checkpoint(path, clients: list[ClientState]):
    """Per-client adapter snapshot: JSON shape header line followed by the
    concatenated row-major float64 factor arrays."""
    header = {"clients": []}
    blobs = []
    for client in clients:
        layers = []
        for layer in client.model.layers:
            for name, M in (("A", layer.A), ("C", layer.C), ("B", layer.B)):
                blobs.append(np.ascontiguousarray(M, dtype=np.float64).tobytes())
            layers.append(
                {"d": layer.d, "k": layer.k, "r": layer.r}
            )
        header["clients"].append({"id": client.id, "layers": layers})
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns {client_id: [(A, C, B), ...]} reconstructed from a snapshot."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        out = {}
        for entry in header["clients"]:
            stacks = []
            for layer in entry["layers"]:
                d, k, r = layer["d"], layer["k"], layer["r"]
                A = np.frombuffer(fh.read(d * r * 8)).reshape(d, r)
                C = np.frombuffer(fh.read(r * r * 8)).reshape(r, r)
                B = np.frombuffer(fh.read(r * k * 8)).reshape(r, k)
                stacks.append((A, C, B))
            out[entry["id"]] = stacks
    return out
