import init, { sampleTimes, modelCurve, voxelMetrics, convergenceCurve } from "./pkg/mcrb_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function drawLines(canvas, xs, series, refLine) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const ys = series.flatMap((s) => s.values).filter(Number.isFinite);
  if (refLine !== undefined) ys.push(refLine);
  let lo = Math.min(...ys), hi = Math.max(...ys);
  if (hi === lo) { lo -= 0.5; hi += 0.5; }
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - lo) / (hi - lo)) * (h - 2 * pad);
  ctx.strokeStyle = "#000";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#000";
  ctx.font = "11px sans-serif";
  ctx.fillText(hi.toPrecision(3), 2, pad + 4);
  ctx.fillText(lo.toPrecision(3), 2, h - pad);
  ctx.fillText(String(x0), pad, h - pad + 14);
  ctx.fillText(String(x1), w - pad - 10, h - pad + 14);
  if (refLine !== undefined) {
    ctx.setLineDash([6, 4]);
    ctx.strokeStyle = "gray";
    ctx.beginPath();
    ctx.moveTo(pad, py(refLine));
    ctx.lineTo(w - pad, py(refLine));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  series.forEach((s, i) => {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    let started = false;
    s.values.forEach((y, j) => {
      if (!Number.isFinite(y)) { started = false; return; }
      if (started) ctx.lineTo(px(xs[j]), py(y)); else ctx.moveTo(px(xs[j]), py(y));
      started = true;
    });
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, w - pad - 120, pad + 14 + 14 * i);
  });
}

function showError(el, e) {
  el.innerHTML = `<p class="error">${String(e)}</p>`;
}

function runCurve() {
  const times = sampleTimes();
  const values = modelCurve(num("c-f"), num("c-att"), $("c-kidney").checked);
  drawLines($("c-plot"), Array.from(times), [{ label: "dM(t)", color: "#1f77b4", values: Array.from(values) }]);
}

function runVoxel() {
  const out = $("v-out");
  try {
    const r = voxelMetrics(num("v-f"), num("v-att"), num("v-snr"), num("v-m"), num("v-kout"), false, num("v-seed"));
    const names = ["f_hat", "att_hat", "lambda_max", "lambda_min", "kappa", "CRB(f)", "MCRB(f)"];
    out.innerHTML = "<table><tr>" + names.map((n) => `<th>${n}</th>`).join("") + "</tr><tr>" +
      Array.from(r).map((v) => `<td>${v.toPrecision(4)}</td>`).join("") + "</tr></table>";
  } catch (e) {
    showError(out, e);
  }
}

function runConvergence() {
  const rows = convergenceCurve(num("g-n"), num("g-m"), num("g-k"), num("g-snr"), num("g-kout"), num("g-seed"));
  const ms = [], hi = [], lo = [];
  for (let i = 0; i < rows.length; i += 4) {
    ms.push(rows[i]); hi.push(rows[i + 1]); lo.push(rows[i + 2]);
  }
  drawLines($("g-plot"), ms, [
    { label: "median lambda_max", color: "#d62728", values: hi },
    { label: "median lambda_min", color: "#2ca02c", values: lo },
  ], 1);
}

await init();
$("c-run").onclick = runCurve;
$("v-run").onclick = runVoxel;
$("g-run").onclick = () => { try { runConvergence(); } catch (e) { alert(e); } };
runCurve();
