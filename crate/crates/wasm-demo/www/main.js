import init, { simulate, heuristic_scores, synth_points } from "./pkg/cgpfl_wasm.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const $ = (id) => document.getElementById(id);

function num(id) {
  return Number($(id).value);
}

function mu() {
  return Math.pow(10, num("mu"));
}

function scenario(extra = {}) {
  return {
    num_contexts: num("num_contexts"),
    clients_per_context: num("clients_per_context"),
    separation: num("separation"),
    noise_std: num("noise_std"),
    seed: num("seed"),
    algorithm: $("algorithm").value,
    k: num("k"),
    k_max: num("k_max"),
    rounds: num("rounds"),
    lambda: num("lambda"),
    mu: mu(),
    ...extra,
  };
}

function call(fn, req, out) {
  try {
    out.classList.remove("err");
    return JSON.parse(fn(JSON.stringify(req)));
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e);
    return null;
  }
}

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

function drawPoints() {
  const out = $("points-out");
  const res = call(synth_points, scenario(), out);
  if (!res) return;
  const canvas = $("points");
  const ctx = clear(canvas);
  const xs = res.points.map((p) => p[0]);
  const ys = res.points.map((p) => p[1]);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const sx = (x) => 10 + ((x - x0) / (x1 - x0 || 1)) * (canvas.width - 20);
  const sy = (y) => canvas.height - 10 - ((y - y0) / (y1 - y0 || 1)) * (canvas.height - 20);
  const markers = ["circle", "square", "triangle", "diamond", "cross", "plus"];
  for (const [x, y, label, context] of res.points) {
    ctx.fillStyle = COLORS[label % COLORS.length];
    marker(ctx, markers[context % markers.length], sx(x), sy(y));
  }
  out.textContent = `${res.points.length} training samples; colour = class, shape = context`;
}

function marker(ctx, kind, x, y) {
  const r = 3.5;
  ctx.beginPath();
  if (kind === "circle") ctx.arc(x, y, r, 0, 2 * Math.PI);
  else if (kind === "square") ctx.rect(x - r, y - r, 2 * r, 2 * r);
  else if (kind === "triangle") { ctx.moveTo(x, y - r); ctx.lineTo(x + r, y + r); ctx.lineTo(x - r, y + r); }
  else if (kind === "diamond") { ctx.moveTo(x, y - r); ctx.lineTo(x + r, y); ctx.lineTo(x, y + r); ctx.lineTo(x - r, y); }
  else { ctx.rect(x - r, y - 1, 2 * r, 2); ctx.rect(x - 1, y - r, 2, 2 * r); }
  ctx.fill();
}

function drawCurves(series) {
  const canvas = $("curves");
  const ctx = clear(canvas);
  const pad = 30;
  const T = Math.max(...series.map((s) => s.rounds.length), 2);
  const sx = (t) => pad + (t / (T - 1)) * (canvas.width - 2 * pad);
  const sy = (a) => canvas.height - pad - a * (canvas.height - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText("1.0", 4, sy(1) + 4);
  ctx.fillText("0.0", 4, sy(0) + 4);
  ctx.fillText("round", canvas.width / 2, canvas.height - 8);
  series.forEach((s, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    s.rounds.forEach((r, j) => (j ? ctx.lineTo(sx(j), sy(r.accuracy)) : ctx.moveTo(sx(j), sy(r.accuracy))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.name, canvas.width - pad - 90, pad + 14 + 14 * i);
  });
}

function run() {
  const out = $("run-out");
  const res = call(simulate, scenario(), out);
  if (!res) return;
  drawCurves([{ name: `${$("algorithm").value} K=${res.k}`, rounds: res.rounds }]);
  out.textContent =
    `final mean test accuracy ${res.final_accuracy?.toFixed(3)}\n` +
    `cluster of each client: ${res.cluster_of.join(" ")}\n` +
    `true context:           ${res.context_of.join(" ")}`;
}

function compare() {
  const out = $("run-out");
  const series = [];
  for (let k = 1; k <= 4; k++) {
    const res = call(simulate, scenario({ algorithm: "cgpfl", k }), out);
    if (!res) return;
    series.push({ name: `K=${k}: ${res.final_accuracy.toFixed(3)}`, rounds: res.rounds });
  }
  drawCurves(series);
  out.textContent = "CGPFL final accuracy for K = 1..4";
}

let lastTable = null;

function drawScores() {
  if (!lastTable) return;
  const m = mu();
  const rows = lastTable.rows.map((r) => ({ k: r.k, c: r.complexity, f: m * r.cost }));
  const best = rows.reduce((b, r) => (r.c + r.f < b.c + b.f ? r : b), rows[0]);
  const canvas = $("scores");
  const ctx = clear(canvas);
  const pad = 30;
  const max = Math.max(...rows.map((r) => r.c + r.f));
  const w = (canvas.width - 2 * pad) / rows.length;
  rows.forEach((r, i) => {
    const h = (v) => (v / max) * (canvas.height - 2 * pad);
    const x = pad + i * w + 6;
    ctx.fillStyle = "#9ecae1";
    ctx.fillRect(x, canvas.height - pad - h(r.c), w - 12, h(r.c));
    ctx.fillStyle = r === best ? "#d62728" : "#3182bd";
    ctx.fillRect(x, canvas.height - pad - h(r.c + r.f), w - 12, h(r.f));
    ctx.fillStyle = "#333";
    ctx.fillText(`K=${r.k}`, x + (w - 12) / 2 - 10, canvas.height - 10);
  });
  $("heur-out").textContent =
    `e(K) = complexity (light) + μ·cost (dark); K̂ = ${best.k} at μ = ${m.toFixed(1)}`;
}

function heur() {
  const res = call(heuristic_scores, scenario(), $("heur-out"));
  if (!res) return;
  lastTable = res;
  drawScores();
}

function showMu() {
  $("mu-val").textContent = mu().toFixed(1);
  drawScores();
}

await init();
$("show-points").onclick = drawPoints;
$("run").onclick = run;
$("compare").onclick = compare;
$("heur").onclick = heur;
$("mu").oninput = showMu;
showMu();
drawPoints();
