/** DOM wiring: list/search, detail inspection, edit/approve, preview. */

import { ApiClient, ApiError } from "./api.js";
import type { Bullet, BulletInput, EntryDetail } from "./types.js";
import {
  renderConflictDialog,
  renderEntryDetail,
  renderEntryList,
  renderErrorBanner,
  renderPreviewError,
  renderPreviewPanes,
  renderSearchHits,
} from "./views.js";

const client = new ApiClient("", localStorage.getItem("adminToken") ?? undefined);

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

let currentEntry: EntryDetail | null = null;

async function refreshList(): Promise<void> {
  const query = (el("search") as HTMLInputElement).value.trim();
  const status = (el("status-filter") as HTMLSelectElement).value;
  const target = el("list");
  try {
    if (query) {
      const { hits } = await client.searchEntries(query, 5);
      target.innerHTML = renderSearchHits(hits);
    } else {
      const { entries } = await client.listEntries(status ? { status } : {});
      target.innerHTML = renderEntryList(entries);
    }
  } catch (err) {
    // never present stale data as live
    target.innerHTML = renderErrorBanner(
      err instanceof ApiError ? err.message : "Service unreachable.",
    );
  }
}

async function openEntry(entryId: number): Promise<void> {
  currentEntry = await client.getEntry(entryId);
  el("detail").innerHTML = renderEntryDetail(currentEntry);
  el("editor-pane").hidden = false;
  (el("bullets-editor") as HTMLTextAreaElement).value = JSON.stringify(
    currentEntry.strategy.bullets, null, 2);
}

function editedBullets(): BulletInput[] {
  const raw = (el("bullets-editor") as HTMLTextAreaElement).value;
  return JSON.parse(raw) as BulletInput[];
}

async function save(): Promise<void> {
  if (!currentEntry) return;
  const editor = (el("editor-name") as HTMLInputElement).value || "anonymous";
  const result = await client.saveEntry(
    currentEntry.entry_id, editedBullets(), editor, currentEntry.strategy.revision);
  if (result.outcome === "conflict") {
    el("dialog-host").innerHTML = renderConflictDialog(
      result.conflict, editedBullets() as Bullet[], result.serverEntry);
    return;
  }
  await openEntry(currentEntry.entry_id);
  await refreshList();
}

async function approve(): Promise<void> {
  if (!currentEntry) return;
  const editor = (el("editor-name") as HTMLInputElement).value || "anonymous";
  await client.approveEntry(currentEntry.entry_id, editor);
  await openEntry(currentEntry.entry_id);
  await refreshList();
}

async function preview(): Promise<void> {
  if (!currentEntry) return;
  try {
    const result = await client.previewEntry(currentEntry.entry_id);
    el("preview").innerHTML = renderPreviewPanes(currentEntry, result);
  } catch (err) {
    el("preview").innerHTML = renderPreviewError(
      err instanceof ApiError ? err.message : "Preview backend failure.");
  }
}

export function wire(): void {
  el("search").addEventListener("input", () => void refreshList());
  el("status-filter").addEventListener("change", () => void refreshList());
  el("list").addEventListener("click", (event) => {
    const row = (event.target as HTMLElement).closest("tr[data-entry-id]");
    if (row) void openEntry(Number(row.getAttribute("data-entry-id")));
  });
  el("save").addEventListener("click", () => void save());
  el("approve").addEventListener("click", () => void approve());
  el("preview-btn").addEventListener("click", () => void preview());
  void refreshList();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  wire();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wire);
}
