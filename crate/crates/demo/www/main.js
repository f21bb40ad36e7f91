import init, { energy_trace, gram_spectrum, prescription_table } from "./pkg/denseam_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showError(id, e) {
  $(id).className = "err";
  $(id).textContent = String(e.message ?? e);
}

// Polylines on one canvas; `series` is a list of {values, color, label}.
function plot(canvas, series, { logY = false } = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, w, h);
  const tf = (v) => (logY ? Math.log10(Math.max(v, 1e-12)) : v);
  const all = series.flatMap((s) => s.values.map(tf)).filter(Number.isFinite);
  if (all.length === 0) return;
  let lo = Math.min(...all), hi = Math.max(...all);
  if (hi === lo) { hi += 1; lo -= 1; }
  const n = Math.max(...series.map((s) => s.values.length));
  const x = (i) => pad + (i / Math.max(n - 1, 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((tf(v) - lo) / (hi - lo)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  const label = (t) => (logY ? `1e${t.toFixed(1)}` : t.toPrecision(4));
  ctx.fillText(label(hi), 2, pad + 4);
  ctx.fillText(label(lo), 2, h - pad);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, w - pad - 220, pad + 14 + 14 * k);
  });
}

function runEnergy() {
  try {
    const e = energy_trace($("e-act").value, $("e-centered").checked, num("e-n"), num("e-k"),
      num("e-dt"), num("e-steps"), num("e-seed"));
    const values = Array.from(e);
    let rises = 0;
    for (let i = 1; i < values.length; i++) if (values[i] > values[i - 1] + 1e-10) rises++;
    plot($("e-canvas"), [{ values, color: "#1f77b4", label: "effective energy vs step" }]);
    $("e-msg").className = "";
    $("e-msg").textContent =
      `E: ${values[0].toFixed(5)} -> ${values[values.length - 1].toFixed(5)}; steps with rising energy: ${rises}`;
  } catch (e) { showError("e-msg", e); }
}

function runSpectrum() {
  try {
    const s = JSON.parse(gram_spectrum($("s-act").value, num("s-k"), num("s-b"), num("s-n"), 7));
    plot($("s-canvas"), [
      { values: s.uncentered, color: "#d62728", label: "uncentered eigenvalues / K" },
      { values: s.centered, color: "#2ca02c", label: "centered eigenvalues / K" },
    ], { logY: true });
    $("s-msg").className = "";
    $("s-msg").textContent =
      `top eigenvalue: uncentered ${s.uncentered[0].toPrecision(4)}, centered ${s.centered[0].toPrecision(4)}, predicted spike ${s.predicted_spike.toPrecision(4)}`;
  } catch (e) { showError("s-msg", e); }
}

function runTable() {
  try {
    const rows = JSON.parse(prescription_table($("t-regime").value, num("t-scale"), num("t-eta")));
    const fmt = (v) => (v === null ? "-" : Number(v).toPrecision(4));
    const body = rows.map((r) => `<tr><td>${r.activation}</td><td>${r.optimizer}</td>` +
      (r.note ? `<td colspan="5" style="text-align:left">no prescription</td>` :
        [r.s1, r.s2, r.eta_w, r.eta_b, r.eta_c].map((v) => `<td>${fmt(v)}</td>`).join("")) + "</tr>").join("");
    $("t-out").className = "";
    $("t-out").innerHTML = `<table><tr><th>activation</th><th>optimizer</th><th>s1</th><th>s2</th>` +
      `<th>eta_W</th><th>eta_b</th><th>eta_c</th></tr>${body}</table>`;
  } catch (e) { showError("t-out", e); }
}

await init();
$("e-run").addEventListener("click", runEnergy);
$("s-run").addEventListener("click", runSpectrum);
for (const id of ["t-regime", "t-scale", "t-eta"]) $(id).addEventListener("input", runTable);
runEnergy();
runSpectrum();
runTable();
