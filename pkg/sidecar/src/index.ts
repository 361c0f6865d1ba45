export * from "./geometry";
export * from "./image";
export * from "./detect";
export * from "./model";
export * from "./mide";
export * from "./fixture";
export * from "./extract";
