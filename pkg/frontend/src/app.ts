// DOM wiring: renders the store into the page and binds the controls.

import { SessionClient } from "./client.js";
import type { Popup } from "./store.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("session") ?? `http://${window.location.hostname}:7700`;

const client = new SessionClient(base);
const store = client.store;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function renderStages(): void {
  const list = el<HTMLOListElement>("stages");
  list.innerHTML = "";
  for (let ordinal = 1; ordinal <= store.stagesTotal; ordinal++) {
    const item = document.createElement("li");
    const mark = store.stageMark(ordinal);
    item.className = `stage ${mark}`;
    item.textContent = mark === "done" ? `✔ stage ${ordinal}` : `stage ${ordinal}`;
    list.appendChild(item);
  }
  el("progress").textContent = `${store.doneCount()}/${store.stagesTotal} stages`;
  el("phase").textContent = store.complete ? "Complete" : store.phase;
}

function renderHoles(): void {
  const grid = el("holes");
  grid.innerHTML = "";
  for (const [hole, state] of Object.entries(store.holes).sort()) {
    const cell = document.createElement("span");
    cell.className = `hole ${state}`;
    cell.title = state;
    cell.textContent = hole;
    grid.appendChild(cell);
  }
}

function renderPopup(): void {
  const modal = el("guidance-modal");
  const popup: Popup | null = store.activePopup;
  if (!popup) {
    modal.classList.add("hidden");
    return;
  }
  modal.classList.remove("hidden");
  el("guidance-title").textContent = popup.errorKind
    ? `${popup.errorKind} (stage ${popup.stage})`
    : `Guidance (stage ${popup.stage})`;
  el("guidance-body").textContent = `${popup.textKey} ${JSON.stringify(popup.parameters)}`;
  el<HTMLButtonElement>("guidance-ack").onclick = () => {
    void client.acknowledgeGuidance(popup.eventId);
  };
}

function renderScrollback(): void {
  const log = el("scrollback");
  log.innerHTML = "";
  for (const envelope of store.scrollback.slice(-200)) {
    const row = document.createElement("div");
    row.className = "event-row";
    row.textContent = `#${envelope.event_id} t=${(envelope.t_ms / 1000).toFixed(1)}s ${JSON.stringify(envelope.event)}`;
    log.appendChild(row);
  }
  log.scrollTop = log.scrollHeight;
}

function render(): void {
  el("banner").classList.toggle("hidden", store.connection !== "offline");
  el("pause-badge").classList.toggle("hidden", !store.paused);
  el<HTMLButtonElement>("pause-btn").textContent = store.paused ? "Resume" : "Pause";
  el("toast").textContent = store.lastError ?? "";
  renderStages();
  renderHoles();
  renderPopup();
  renderScrollback();
}

el<HTMLButtonElement>("pause-btn").onclick = () => {
  void client.sendControl({ cmd: store.paused ? "resume" : "pause" });
};
el<HTMLButtonElement>("abort-btn").onclick = () => {
  if (window.confirm("Abort this session?")) void client.sendControl({ cmd: "abort" });
};
el<HTMLAnchorElement>("report-link").href = client.reportUrl();

client.onChange = render;
void client.start();
// hole states travel in snapshots, not events; refresh them periodically
window.setInterval(() => void client.resync(), 5000);
render();
