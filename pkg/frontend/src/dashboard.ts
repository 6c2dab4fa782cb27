/**
 * Metrics dashboard: a line chart of per-round scores (one point per
 * completed round) plus the current rating matrix drawn as an
 * upper-triangular grid with a glyph per cell state. The "Run next round"
 * button kicks off an iteration and polls its job until it settles;
 * while a job is live the button stays disabled, so double clicks no-op.
 */
import { ApiError, Client, LsmView, RoundPoint } from './api.js';

const SERIES: Array<{ key: keyof RoundPoint; label: string; color: string }> = [
  { key: 'emr', label: 'EMR', color: '#2563eb' },
  { key: 'ar', label: 'AR', color: '#16a34a' },
  { key: 'ap', label: 'AP', color: '#d97706' },
  { key: 'p_at_1', label: 'P@1', color: '#9333ea' },
];

export function cellGlyph(state: string, rating: number | null): string {
  if (rating === null) return '&middot;';
  switch (state) {
    case 'sme_confirmed':
      return `[${rating}]`; // model inferred, reviewer agreed
    case 'sme_overridden':
      return `{${rating}}`; // reviewer replaced the model's value
    case 'model_inferred':
      return `(${rating})`;
    default:
      return String(rating); // plain reviewer rating
  }
}

export function chartSvg(points: RoundPoint[], width = 560, height = 220): string {
  const pad = 30;
  const xs = (r: number) =>
    points.length === 1
      ? width / 2
      : pad + ((r - points[0].round) / (points[points.length - 1].round - points[0].round)) * (width - 2 * pad);
  const ys = (v: number) => height - pad - v * (height - 2 * pad);
  let body = `<line x1="${pad}" y1="${ys(0)}" x2="${width - pad}" y2="${ys(0)}" stroke="#ccc"/>`;
  for (const s of SERIES) {
    const coords = points.map((p) => `${xs(p.round)},${ys(p[s.key] as number)}`);
    if (coords.length > 1) {
      body += `<polyline fill="none" stroke="${s.color}" stroke-width="2" points="${coords.join(' ')}"/>`;
    }
    for (const p of points) {
      body += `<circle class="chart-point" data-series="${s.key}" data-round="${p.round}" `;
      body += `cx="${xs(p.round)}" cy="${ys(p[s.key] as number)}" r="3.5" fill="${s.color}"/>`;
    }
  }
  const legend = SERIES.map(
    (s, k) =>
      `<text x="${pad + k * 70}" y="16" fill="${s.color}" font-size="12">${s.label}</text>`,
  ).join('');
  return `<svg viewBox="0 0 ${width} ${height}" role="img">${legend}${body}</svg>`;
}

export function gridHtml(lsm: LsmView, names: string[]): string {
  const byPair = new Map(lsm.cells.map((c) => [`${c.i}-${c.j}`, c]));
  let rows = '<tr><th></th>';
  for (let j = 0; j < lsm.n; j++) rows += `<th title="${names[j] ?? j}">${j}</th>`;
  rows += '</tr>';
  for (let i = 0; i < lsm.n; i++) {
    rows += `<tr><th title="${names[i] ?? i}">${i}</th>`;
    for (let j = 0; j < lsm.n; j++) {
      if (j <= i) {
        rows += '<td class="dead"></td>';
        continue;
      }
      const cell = byPair.get(`${i}-${j}`);
      const rating = cell ? cell.rating : null;
      const state = cell ? cell.state : 'unrated';
      const heat = rating === null ? 'none' : `heat-${rating}`;
      rows += `<td class="lsm-cell ${heat}" data-cell="${i}-${j}" data-state="${state}">`;
      rows += `${cellGlyph(state, rating)}</td>`;
    }
    rows += '</tr>';
  }
  return `<table class="lsm-grid">${rows}</table>`;
}

export class Dashboard {
  running = false;
  message = '';
  private points: RoundPoint[] = [];
  private lsm: LsmView | null = null;
  private names: string[] = [];
  private pollHandle: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private root: HTMLElement,
    private client: Client,
    private onRoundDone: () => void = () => {},
    private pollMs = 500,
  ) {
    root.addEventListener('click', (ev) => {
      const target = ev.target as HTMLElement;
      if (target.getAttribute('data-run') !== null) void this.runRound();
    });
  }

  async load(): Promise<void> {
    const [points, lsm, tags] = await Promise.all([
      this.client.history(),
      this.client.lsm(),
      this.client.tags(),
    ]);
    this.points = points;
    this.lsm = lsm;
    this.names = tags.map((t) => t.name);
    this.render();
  }

  async runRound(): Promise<void> {
    if (this.running) return; // double trigger no-ops
    this.running = true;
    this.message = 'starting round...';
    this.render();
    try {
      await this.client.startIteration();
      this.poll();
    } catch (err) {
      this.running = false;
      this.message =
        err instanceof ApiError ? err.message : `failed to start: ${(err as Error).message}`;
      this.render();
    }
  }

  private poll(): void {
    this.pollHandle = setTimeout(async () => {
      try {
        const job = await this.client.currentIteration();
        if (job.phase === 'done' || job.phase === 'failed') {
          this.running = false;
          this.message =
            job.phase === 'done'
              ? `round ${job.result_round ?? '?'} finished`
              : `round failed: ${job.error ?? 'unknown error'}`;
          await this.load();
          this.onRoundDone();
          return;
        }
        this.message = `training (epoch ${job.progress})`;
        this.render();
        this.poll();
      } catch {
        this.poll(); // transient; keep watching
      }
    }, this.pollMs);
  }

  stop(): void {
    if (this.pollHandle !== null) clearTimeout(this.pollHandle);
  }

  render(): void {
    const chart = this.points.length
      ? chartSvg(this.points)
      : '<p class="empty">No completed rounds yet.</p>';
    const grid = this.lsm ? gridHtml(this.lsm, this.names) : '';
    this.root.innerHTML = `
      <div class="dash-controls">
        <button data-run ${this.running ? 'disabled' : ''}>Run next round</button>
        <span class="dash-message">${this.message}</span>
      </div>
      <div class="chart">${chart}</div>
      <h3>Label similarity matrix</h3>
      <p class="legend">x reviewer &nbsp; [x] confirmed &nbsp; {x} overridden &nbsp; (x) model &nbsp; &middot; unrated</p>
      ${grid}`;
  }
}
