/* tslint:disable */
/* eslint-disable */

export function convergenceCurve(n_voxels: number, m_max: number, k: number, snr: number, k_out: number, seed: number): Float64Array;

export function modelCurve(f: number, att: number, kidney: boolean): Float64Array;

export function sampleTimes(): Float64Array;

export function voxelMetrics(f: number, att: number, snr: number, m: number, k_out: number, kidney: boolean, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly convergenceCurve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly modelCurve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sampleTimes: () => [number, number];
    readonly voxelMetrics: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
