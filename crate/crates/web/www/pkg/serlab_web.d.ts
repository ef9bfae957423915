/* tslint:disable */
/* eslint-disable */

export function activation_curves(lo: number, hi: number, n: number): Float64Array;

/**
 * JSON array of `{lo, hi, closed, n, status, value?}` per bin.
 */
export function binned_ccc_json(points: Float64Array, edges: Float64Array): string;

export function focal_curves(gamma: number, alpha: number, n: number): Float64Array;

/**
 * Global CCC of the scatter.
 */
export function global_ccc(points: Float64Array): number;

export function scatter_points(seed: number, n: number, shrink: number, noise: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly activation_curves: (a: number, b: number, c: number) => [number, number];
    readonly binned_ccc_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly focal_curves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly global_ccc: (a: number, b: number) => [number, number, number];
    readonly scatter_points: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
