/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const activation_curves: (a: number, b: number, c: number) => [number, number];
export const binned_ccc_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const focal_curves: (a: number, b: number, c: number) => [number, number, number, number];
export const global_ccc: (a: number, b: number) => [number, number, number];
export const scatter_points: (a: number, b: number, c: number, d: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
