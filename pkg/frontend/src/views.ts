/** Pure renderers: service payloads in, HTML strings out. No payload mutation. */

import type {
  Bullet,
  ConflictInfo,
  EntryDetail,
  EntrySummary,
  PreviewResponse,
  RefinementRecord,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

const STATUS_LABELS: Record<string, string> = {
  machine_generated: "machine",
  human_edited: "edited",
  human_approved: "approved",
  retired: "retired",
};

function statusBadge(status: string): string {
  const label = STATUS_LABELS[status] ?? status;
  return `<span class="status status-${escapeHtml(status)}">${escapeHtml(label)}</span>`;
}

export function renderEmptyState(): string {
  return `<div class="empty-state">
  <h2>The library is empty</h2>
  <p>Run a training job (POST /v1/jobs/train or <code>stratlib train</code>) to
  populate scenario–strategy entries, then reindex.</p>
</div>`;
}

export function renderErrorBanner(message: string): string {
  return `<div class="error-banner" role="alert">${escapeHtml(message)}</div>`;
}

function summaryRow(entry: EntrySummary): string {
  const distance = entry.distance !== undefined
    ? `<td class="distance">${entry.distance}</td>`
    : "";
  return `<tr data-entry-id="${entry.entry_id}">
  <td>#${entry.entry_id}</td>
  ${distance}
  <td>${statusBadge(entry.status)}</td>
  <td>rev ${entry.revision}</td>
  <td>${entry.bullet_count} bullets</td>
  <td>iter ${entry.created_iteration}</td>
  <td class="snippet">${escapeHtml(entry.last_customer_text)}</td>
</tr>`;
}

export function renderEntryList(entries: EntrySummary[]): string {
  if (entries.length === 0) return renderEmptyState();
  return `<table class="entry-list">
<tbody>
${entries.map(summaryRow).join("\n")}
</tbody>
</table>`;
}

export function renderSearchHits(hits: EntrySummary[]): string {
  if (hits.length === 0) return renderEmptyState();
  return `<table class="entry-list search-hits">
<tbody>
${hits.map(summaryRow).join("\n")}
</tbody>
</table>`;
}

export function renderBullet(bullet: Bullet): string {
  const tag = bullet.kind === "do" ? "DO" : "AVOID";
  return `<li class="bullet bullet-${bullet.kind}" data-bullet-id="${bullet.bullet_id}">` +
    `<strong>${bullet.bullet_id}. [${tag}]</strong> ${escapeHtml(bullet.text)}</li>`;
}

export function renderTranscript(entry: EntryDetail): string {
  const lines = entry.scenario.utterances.map(
    (u) => `<p class="utterance ${u.speaker}">` +
      `<strong>${u.speaker === "agent" ? "AGENT" : "CUSTOMER"}:</strong> ` +
      `${escapeHtml(u.text)}</p>`,
  );
  return `<div class="transcript">${lines.join("\n")}</div>`;
}

function deltaLines(record: RefinementRecord): string[] {
  const delta = record.delta;
  if (delta.kind === "no_changes") return ["NO_CHANGES"];
  const lines: string[] = [];
  for (const add of delta.adds) {
    lines.push(`ADD ${add.kind === "do" ? "DO" : "AVOID"} ${add.text}`);
  }
  for (const [bulletId, text] of delta.modifies) {
    lines.push(`MOD ${bulletId} ${text}`);
  }
  for (const bulletId of delta.removes) {
    lines.push(`DEL ${bulletId}`);
  }
  return lines;
}

/** The refinement history as a vertical diff sequence, one block per round. */
export function renderTimeline(history: RefinementRecord[]): string {
  if (history.length === 0) {
    return `<div class="timeline timeline-empty">No refinement history.</div>`;
  }
  const rounds = history.map((record) => {
    const edits = deltaLines(record)
      .map((line) => `<li class="delta-line">${escapeHtml(line)}</li>`)
      .join("\n");
    return `<section class="round" data-round="${record.round}">
  <h4>Round ${record.round}</h4>
  <p class="student-response">${escapeHtml(record.student_response)}</p>
  <ul class="delta">${edits}</ul>
</section>`;
  });
  return `<div class="timeline">${rounds.join("\n")}</div>`;
}

export function renderEntryDetail(entry: EntryDetail): string {
  const bullets = entry.strategy.bullets.length
    ? `<ul class="bullets">${entry.strategy.bullets.map(renderBullet).join("\n")}</ul>`
    : `<p class="no-bullets">No strategy bullets (base behavior).</p>`;
  const edits = entry.edit_log.map(
    (e) => `<li>${escapeHtml(e.editor)} at ${escapeHtml(e.timestamp)} ` +
      `(from rev ${e.prior_revision})</li>`,
  );
  return `<article class="entry-detail" data-entry-id="${entry.entry_id}"
  data-revision="${entry.strategy.revision}">
<header>
  <h3>Entry #${entry.entry_id}</h3>
  ${statusBadge(entry.status)}
  <span class="revision">revision ${entry.strategy.revision}</span>
  <span class="iteration">iteration ${entry.created_iteration}</span>
</header>
${renderTranscript(entry)}
${bullets}
${renderTimeline(entry.history)}
<ul class="edit-log">${edits.join("\n")}</ul>
</article>`;
}

/** Conflict dialog: never overwrite silently; show both revisions and bullets. */
export function renderConflictDialog(
  conflict: ConflictInfo,
  localBullets: Bullet[],
  serverEntry: EntryDetail,
): string {
  const local = localBullets.map(renderBullet).join("\n");
  const server = serverEntry.strategy.bullets.map(renderBullet).join("\n");
  return `<dialog class="conflict-dialog" open>
  <h3>Edit conflict on entry #${serverEntry.entry_id}</h3>
  <p>Your edit was based on revision ${conflict.base_revision}, but the server is
  at revision ${conflict.current_revision}. Review before retrying.</p>
  <div class="conflict-panes">
    <section><h4>Your bullets</h4><ul>${local}</ul></section>
    <section><h4>Server bullets (rev ${conflict.current_revision})</h4><ul>${server}</ul></section>
  </div>
  <button class="reload">Load server version</button>
  <button class="retry">Retry my edit against rev ${conflict.current_revision}</button>
</dialog>`;
}

/** Side-by-side panes: stored teacher target, last student attempt, fresh preview. */
export function renderPreviewPanes(
  entry: EntryDetail,
  preview: PreviewResponse,
): string {
  const last = entry.history.length
    ? entry.history[entry.history.length - 1]
    : null;
  const teacherPane = last
    ? escapeHtml(last.teacher_response)
    : "(no stored teacher response)";
  const studentPane = last
    ? escapeHtml(last.student_response)
    : "(no stored student response)";
  return `<div class="preview-panes">
  <section class="pane teacher"><h4>Teacher (stored target)</h4>
    <p>${teacherPane}</p></section>
  <section class="pane student-last"><h4>Student (last training round)</h4>
    <p>${studentPane}</p></section>
  <section class="pane student-fresh" data-revision="${preview.strategy_revision}">
    <h4>Student now (rev ${preview.strategy_revision}, ${escapeHtml(preview.generated_at)})</h4>
    <p>${escapeHtml(preview.response)}</p></section>
</div>`;
}

export function renderPreviewError(message: string): string {
  return `<section class="pane pane-error">${escapeHtml(message)}</section>`;
}
